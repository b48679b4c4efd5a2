use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("final time {final_time} must exceed the cross-section diameter {diameter}")]
    FinalTimeTooShort { final_time: f64, diameter: f64 },

    #[error("invalid resolution: {0}")]
    Resolution(String),

    #[error("CFL condition violated: dt = {dt} exceeds {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite field value at time step {step}")]
    NonFinite { step: usize },

    #[error("invalid probe: {0}")]
    Probe(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field touches the edge of its grid; pad it before taking Fourier norms")]
    Unpadded,

    #[error("identity check requires homogeneous Dirichlet data")]
    NonHomogeneous,

    #[error("probe dictionary is empty")]
    EmptyDictionary,

    #[error("probe {0} has no sign partner on its line")]
    MissingPartner(usize),

    #[error("filtered backprojection needs at least 2 angles, got {0}")]
    TooFewAngles(usize),

    #[error("Hölder exponent {0} outside (0, 1)")]
    Alpha(f64),

    #[error("a stability family needs at least two potentials")]
    FamilyTooSmall,

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
