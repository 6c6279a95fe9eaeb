use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A matrix function was applied outside its domain.
    #[error("eigenvalue {eigenvalue:e} is outside the domain of {function}")]
    Domain { function: String, eigenvalue: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    /// Malformed or corrupted file. `position` is a byte offset into `path`.
    #[error("{}: format error at byte {position}: {message}", path.display())]
    Format {
        path: PathBuf,
        position: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, position: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            position,
            message: message.into(),
        }
    }
}
