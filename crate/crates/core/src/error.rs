use thiserror::Error;

pub type Result<T> = std::result::Result<T, ProbeError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("constant column {index} (zero variance after centering)")]
    ConstantColumn { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value at iteration {iteration}, coordinate {coordinate:?}: {what}")]
    Diverged {
        iteration: usize,
        coordinate: Option<usize>,
        what: String,
    },
}
