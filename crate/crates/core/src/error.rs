use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range (expected < {len})")]
    Index { index: usize, len: usize },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("transform construction failed: {0}")]
    Construction(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}
