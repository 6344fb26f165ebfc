use thiserror::Error;

#[derive(Debug, Error)]
pub enum GcdError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("non-finite loss term `{term}` at epoch {epoch}, step {step}")]
    NonFinite {
        term: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("assignment problem of size {0} exceeds capacity {1}")]
    Sizing(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GcdError> = std::result::Result<T, E>;
