//! `dnstab`: batch runs of the waveguide DN-map experiments from a TOML config.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 usage, 3 invalid
//! configuration, 4 CFL violation, 5 non-finite field values, 6 a `verify`
//! check missed its tolerance.

mod artifact;
mod commands;
mod config;
mod error;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Ctx, Finished};
use crate::config::RunConfig;
use crate::error::{exit, CliError};

/// Worker threads for parallel probe jobs; defaults to the number of cores.
const THREADS_VAR: &str = "DNSTAB_THREADS";

#[derive(Parser)]
#[command(
    name = "dnstab",
    version,
    about = "Waveguide DN-map simulation and stability experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run every job on one thread in a fixed order; artifacts are then bit-reproducible.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the boundary value problem for one probe and store its Neumann trace.
    Solve { config: PathBuf },
    /// Estimate the DN-map gap over the probe dictionary.
    DnGap { config: PathBuf },
    /// X-ray transform and filtered backprojection of slices of q1 - q2.
    Xray { config: PathBuf },
    /// Reconstruct the mollified potential gap from boundary correlations.
    Reconstruct { config: PathBuf },
    /// Fit the stability inequality over a family of potentials.
    Stability { config: PathBuf },
    /// Run the invariant suite and report pass/fail per check.
    Verify { config: PathBuf },
}

type Job = fn(&Ctx) -> Result<Finished, CliError>;

fn threads() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_VAR}: expected a positive integer, got {v:?}"
            ))),
        },
    }
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let workers = if cli.sequential { Some(1) } else { threads()? };
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("{THREADS_VAR}: {e}")))?;
    }
    let (path, job): (_, Job) = match cli.command {
        Command::Solve { config } => (config, commands::solve),
        Command::DnGap { config } => (config, commands::dn_gap_cmd),
        Command::Xray { config } => (config, commands::xray),
        Command::Reconstruct { config } => (config, commands::reconstruct),
        Command::Stability { config } => (config, commands::stability),
        Command::Verify { config } => (config, verify::verify),
    };
    let loaded = RunConfig::load(&path)?;
    let ctx = Ctx {
        loaded,
        parallel: !cli.sequential,
    };
    let finished = job(&ctx)?;
    let manifest = finished.output.finish(&ctx.loaded.config, cli.sequential)?;
    if finished.missed.is_empty() {
        Ok(manifest)
    } else {
        eprintln!("report: {}", manifest.display());
        Err(CliError::AcceptanceMiss(finished.missed))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::from(exit::OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
