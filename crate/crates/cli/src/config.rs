//! Run configuration: one TOML file fixes every experiment parameter.

use std::path::{Path, PathBuf};

use dnstab::dn::Denominator;
use dnstab::geometry::{build_grid, CrossSection, Resolution, WaveguideGrid};
use dnstab::phantom::{Phantom, PhantomSpec};
use dnstab::probes::{place_probes, Placement};
use dnstab::xray::FbpOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Artifacts go to `<output_dir>/<subcommand>/`.
    pub output_dir: PathBuf,
    pub geometry: GeometryConfig,
    pub potentials: PotentialsConfig,
    pub probes: Placement,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub xray: XrayConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default)]
    pub cross_section: CrossSection,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub final_time: f64,
    pub r_support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialsConfig {
    pub q1: Phantom,
    pub q2: Phantom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Keep every `trace_stride`-th level of the Neumann trace.
    pub trace_stride: usize,
    /// Dictionary index of the probe driven by `solve`.
    pub probe: usize,
    pub denominator: Denominator,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            trace_stride: 1,
            probe: 0,
            denominator: Denominator::Surrogate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub plane_nodes: usize,
    pub fbp: FbpOptions,
    pub deconvolve: Option<f64>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            plane_nodes: 65,
            fbp: FbpOptions {
                apodize: true,
                support_radius: None,
            },
            deconvolve: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XrayConfig {
    pub angles: usize,
    pub offsets: usize,
    pub plane_nodes: usize,
    /// Axial positions of the slices of `q₁ − q₂` to transform.
    pub slices: Vec<f64>,
    pub fbp: FbpOptions,
}

impl Default for XrayConfig {
    fn default() -> Self {
        XrayConfig {
            angles: 180,
            offsets: 256,
            plane_nodes: 129,
            slices: vec![0.0],
            fbp: FbpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    /// Added to `q₁` at every scale to form the family.
    pub perturbation: Vec<PhantomSpec>,
    pub scales: Vec<f64>,
    pub window_r: Option<f64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            perturbation: vec![PhantomSpec::Bump {
                amplitude: 1.0,
                center: [0.1, -0.05, 0.0],
                radius: 0.25,
            }],
            scales: vec![0.05, 0.1, 0.2, 0.4],
            window_r: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Lateral nodes of the coarse multiplier-identity grid; the fine grid doubles them.
    pub rellich_nodes: usize,
    pub rellich_axial: usize,
    pub rellich_final_time: f64,
    pub go_nodes: usize,
    pub go_axial: usize,
    pub rhos: Vec<f64>,
    pub mollifier_plane_nodes: usize,
    pub mollifier_deltas: Vec<f64>,
    pub tomography_phantoms: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            rellich_nodes: 48,
            rellich_axial: 96,
            rellich_final_time: 2.0,
            go_nodes: 33,
            go_axial: 341,
            rhos: vec![4.0, 8.0, 16.0, 32.0],
            mollifier_plane_nodes: 301,
            mollifier_deltas: vec![0.1, 0.08, 0.064, 0.0512, 0.04096],
            tomography_phantoms: 100,
        }
    }
}

/// A validated configuration and the hash of its canonical form.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub hash: [u8; 32],
}

impl Loaded {
    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash)
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(toml::Deserializer::new(text))
            .map_err(|e| field(&e.path().to_string(), e.inner().message().trim()))
    }

    /// Canonical TOML text; parsing it back gives the same configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    pub fn grid(&self) -> Result<WaveguideGrid, CliError> {
        let g = &self.geometry;
        build_grid(
            g.cross_section,
            Resolution::new(g.nx, g.ny, g.nz),
            g.final_time,
            g.r_support,
        )
        .map_err(|e| field("geometry", e))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid()?;
        for (name, q) in [
            ("potentials.q1", &self.potentials.q1),
            ("potentials.q2", &self.potentials.q2),
        ] {
            q.validate().map_err(|e| field(name, e))?;
            if q.axial_support() > grid.r_support {
                return Err(field(
                    &format!("{name}.terms"),
                    format!(
                        "support reaches |x₃| = {}, beyond geometry.r_support = {}",
                        q.axial_support(),
                        grid.r_support
                    ),
                ));
            }
        }
        place_probes(&grid, &self.probes).map_err(|e| field("probes", e))?;
        if self.solver.trace_stride == 0 {
            return Err(field("solver.trace_stride", "must be at least 1"));
        }
        if self.reconstruct.plane_nodes < 3 {
            return Err(field("reconstruct.plane_nodes", "must be at least 3"));
        }
        if self.xray.angles < 2 || self.xray.offsets < 2 || self.xray.plane_nodes < 3 {
            return Err(field(
                "xray",
                "need at least 2 angles, 2 offsets and 3 plane nodes",
            ));
        }
        if self.xray.slices.is_empty() {
            return Err(field("xray.slices", "empty"));
        }
        let st = &self.stability;
        if st.scales.len() < 2 || st.scales.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(field(
                "stability.scales",
                "need at least two positive scales",
            ));
        }
        for (i, p) in st.perturbation.iter().enumerate() {
            p.validate()
                .map_err(|e| field(&format!("stability.perturbation[{i}]"), e))?;
        }
        let v = &self.verify;
        if v.rhos.len() < 2 || v.mollifier_deltas.len() < 2 {
            return Err(field(
                "verify",
                "slope fits need at least two rhos and two deltas",
            ));
        }
        if v.tomography_phantoms < 2 {
            return Err(field("verify.tomography_phantoms", "must be at least 2"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Loaded, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = RunConfig::parse(&text)?;
        config.validate()?;
        let hash = config.hash();
        Ok(Loaded { config, hash })
    }
}
