use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("colliding state: particles {0} and {1} share a position")]
    CollidingState(usize, usize),
    #[error("non-finite value produced at t = {0}; step size too large")]
    NonFinite(f64),
    #[error("step halving exhausted after {0} levels at t = {1}")]
    MaxSubstepsExceeded(usize, f64),
    #[error("invalid initial condition: {0}")]
    InvalidInit(String),
    #[error("coupled models differ in diffusion or interaction: {0}")]
    MismatchedModels(String),
    #[error("trajectory grids do not match")]
    GridMismatch,
    #[error("matrix of size {0} exceeds the eigensolver budget of {1}")]
    TooLarge(usize, usize),
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("moment hierarchy needs {needed} initial moments, got {given}")]
    DegreeOverflow { needed: usize, given: usize },
    #[error("degree {0} is not available")]
    DegreeMissing(usize),
    #[error("trajectory carries no recorded noise")]
    NoNoiseRecorded,
    #[error("covariance matrix is not positive semidefinite (pivot {0:e})")]
    NotPsd(f64),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("too few samples: need {needed}, got {given}")]
    TooFewSamples { needed: usize, given: usize },
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("replica {replica} (seed {seed}): {source}")]
    Replica {
        replica: u64,
        seed: u64,
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
