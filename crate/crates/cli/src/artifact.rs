//! Artifact persistence. Every file carries the config hash: grid files in
//! their header tag, CSV tables in a leading comment line, JSON reports in a
//! `config_hash` field. The manifest lists every file with its own digest.

use std::path::PathBuf;

use dnstab::grid_io::GridFile;
use dnstab::probes::GoProbe;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Loaded, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub file: String,
    pub kind: &'static str,
    pub sha256: String,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    sequential: bool,
    config: &'a RunConfig,
    /// The probe dictionary the run used, if any.
    probes: &'a [GoProbe],
    artifacts: &'a [Entry],
}

pub struct Output {
    dir: PathBuf,
    command: &'static str,
    hash: [u8; 32],
    hash_hex: String,
    entries: Vec<Entry>,
    probes: Vec<GoProbe>,
}

impl Output {
    pub fn create(loaded: &Loaded, command: &'static str) -> Result<Self, CliError> {
        let dir = loaded.config.output_dir.join(command);
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(Output {
            dir,
            command,
            hash: loaded.hash,
            hash_hex: loaded.hash_hex(),
            entries: Vec::new(),
            probes: Vec::new(),
        })
    }

    pub fn set_probes(&mut self, probes: &[GoProbe]) {
        self.probes = probes.to_vec();
    }

    fn put(&mut self, name: &str, kind: &'static str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.entries.push(Entry {
            file: name.to_string(),
            kind,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn grid(&mut self, name: &str, mut grid: GridFile) -> Result<(), CliError> {
        grid.tag = self.hash;
        let mut buf = Vec::new();
        grid.write_to(&mut buf)
            .map_err(CliError::io(self.dir.join(name)))?;
        self.put(name, "grid", &buf)
    }

    pub fn csv<R: Serialize>(
        &mut self,
        name: &str,
        rows: impl IntoIterator<Item = R>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let wrap = |source| CliError::Csv {
            path: path.clone(),
            source,
        };
        let mut w =
            csv::Writer::from_writer(format!("# config_hash: {}\n", self.hash_hex).into_bytes());
        for r in rows {
            w.serialize(r).map_err(wrap)?;
        }
        let bytes = w.into_inner().map_err(|e| wrap(e.into_error().into()))?;
        self.put(name, "csv", &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        let report = Report {
            command: self.command,
            config_hash: &self.hash_hex,
            body,
        };
        let text = serde_json::to_string_pretty(&report).expect("reports serialize");
        self.put(name, "json", text.as_bytes())
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self, config: &RunConfig, sequential: bool) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.hash_hex,
            sequential,
            config,
            probes: &self.probes,
            artifacts: &self.entries,
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(path)
    }
}
