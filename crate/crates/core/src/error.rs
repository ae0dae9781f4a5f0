use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdpcError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("evaluation failed at sample {index}: {reason}")]
    Evaluation { index: usize, reason: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("search failure: {0}")]
    Search(String),
}

impl FdpcError {
    pub fn config(msg: impl Into<String>) -> Self {
        FdpcError::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        FdpcError::Argument(msg.into())
    }

    pub fn solver(msg: impl Into<String>) -> Self {
        FdpcError::Solver(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, FdpcError::Config(_) | FdpcError::Argument(_))
    }
}

pub type Result<T> = std::result::Result<T, FdpcError>;
