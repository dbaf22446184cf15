use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched dimensions between vectors, parameter sets or datasets.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument outside the operation's domain (empty batch, bad temperature, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed dataset file. `row` is 1-based.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// Malformed checkpoint stream.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
