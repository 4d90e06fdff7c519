use thiserror::Error;

use crate::geometry::Vec3;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A kernel was evaluated exactly at a microphone position.
    #[error("position {position} coincides with the microphone at {mic}")]
    Singular { mic: Vec3, position: Vec3 },

    /// The spike configuration does not give a full-rank `[γ | ∂γ]` system.
    #[error("degenerate configuration: relative singular value {relative_sigma:.3e} below {tolerance:.1e}")]
    Degenerate { relative_sigma: f64, tolerance: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Format(e.to_string())
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Format(format!("{other:?}")),
            }
        } else {
            Error::Format(e.to_string())
        }
    }
}
