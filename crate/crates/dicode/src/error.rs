use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum DicodeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, DicodeError>;

impl From<serde_json::Error> for DicodeError {
    fn from(e: serde_json::Error) -> Self {
        DicodeError::Serde(e.to_string())
    }
}
