use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes, one per failure class. Usage errors exit with 2 via clap.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const CONFIG: u8 = 3;
    pub const CFL: u8 = 4;
    pub const NON_FINITE: u8 = 5;
    pub const ACCEPTANCE_MISS: u8 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] dnstab::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("writing {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("checks failed: {}", .0.join(", "))]
    AcceptanceMiss(Vec<String>),
}

fn root(mut e: &dnstab::Error) -> &dnstab::Error {
    while let dnstab::Error::Stage { source, .. } = e {
        e = source;
    }
    e
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        use dnstab::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::AcceptanceMiss(_) => exit::ACCEPTANCE_MISS,
            CliError::Io { .. } | CliError::Csv { .. } => exit::INTERNAL,
            CliError::Core(e) => match root(e) {
                E::Cfl { .. } => exit::CFL,
                E::NonFinite { .. } => exit::NON_FINITE,
                E::FinalTimeTooShort { .. }
                | E::Resolution(_)
                | E::Probe(_)
                | E::InvalidArgument(_)
                | E::EmptyDictionary
                | E::TooFewAngles(_)
                | E::Alpha(_)
                | E::FamilyTooSmall => exit::CONFIG,
                _ => exit::INTERNAL,
            },
        }
    }
}
