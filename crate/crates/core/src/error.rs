use thiserror::Error;

pub type Result<T, E = MoeError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("family `{family}` is not compatible with variant ({variant}): {reason}")]
    Incompatible {
        family: String,
        variant: char,
        reason: String,
    },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("component {component} is degenerate (effective size {size:.4})")]
    DegenerateComponent { component: usize, size: f64 },

    #[error("observation {0} has zero density under every component")]
    DegenerateObservation(usize),

    #[error("log-likelihood is not finite")]
    NonFinite,

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {attempts} restarts failed; last error: {last}")]
    AllRestartsFailed { attempts: usize, last: Box<MoeError> },

    #[error("too few draws: need at least {needed}, have {have}")]
    TooFewDraws { needed: usize, have: usize },
}

impl MoeError {
    /// True for errors caused by numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MoeError::NotPositiveDefinite(_)
                | MoeError::DegenerateComponent { .. }
                | MoeError::DegenerateObservation(_)
                | MoeError::NonFinite
                | MoeError::Numerical(_)
                | MoeError::AllRestartsFailed { .. }
        )
    }
}
