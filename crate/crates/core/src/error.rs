use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TnnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The trial function collapsed to (numerically) zero.
    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("config error at line {line} (key `{key}`): {message}")]
    Config { key: String, line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl TnnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TnnError::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        TnnError::Numeric(msg.into())
    }
}

impl From<std::io::Error> for TnnError {
    fn from(e: std::io::Error) -> Self {
        TnnError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TnnError>;
