use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("summary map is missing an entry for parameter {0}")]
    MissingMapEntry(usize),

    #[error("missing pairwise correlation for pair ({0}, {1})")]
    MissingPair(usize, usize),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("simulator failed after {attempts} attempts: {reason}")]
    SimulatorFailure { attempts: usize, reason: String },

    #[error("linear system is rank deficient: {0}")]
    RankDeficient(String),

    #[error("optimizer failed to converge: {0}")]
    NonConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("file format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
