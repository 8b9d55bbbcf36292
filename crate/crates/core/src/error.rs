use std::io;

use thiserror::Error;

/// Errors raised anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// The detail text without the category prefix.
    pub fn message(&self) -> String {
        match self {
            Error::InvalidData(m)
            | Error::Dimension(m)
            | Error::InvalidArgument(m)
            | Error::Config(m)
            | Error::ModelFormat(m) => m.clone(),
            other => other.to_string(),
        }
    }
}
