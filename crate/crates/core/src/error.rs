use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (jitter ladder exhausted at {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("non-finite function value at probe {index}")]
    NonFiniteEvaluation { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("no observations supplied")]
    EmptyObservations,

    #[error("duplicate observation at time {time} in dimension {dim}")]
    DuplicateObservation { time: f64, dim: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate time axis: {0}")]
    DegenerateTime(String),

    #[error("objective became non-finite at outer iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("numerical failure at outer iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("density {density} too low to satisfy the observation constraints")]
    DensityTooLow { density: f64 },

    #[error("dimension {0} has no observations")]
    EmptyDimension(usize),

    #[error("dataset has no ground truth")]
    MissingGroundTruth,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical kind (as opposed to input or I/O problems).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::NotSymmetric { .. }
            | Error::NonFiniteEvaluation { .. }
            | Error::NonFiniteObjective { .. } => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        match self {
            e @ (Error::AtIteration { .. } | Error::NonFiniteObjective { .. }) => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}
