use std::io;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular or ill-conditioned matrix (pivot magnitude {pivot:e})")]
    SingularMatrix { pivot: f64 },

    #[error("frame integrity: {0}")]
    FrameIntegrity(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Config(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
