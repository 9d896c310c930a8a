use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("insufficient key capacity: need {needed} candidate edges, only {available} available")]
    Capacity { needed: usize, available: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("provider transport error: {0}")]
    Transport(String),

    #[error("provider protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { field: field.into(), message: message.into() }
    }
}
