use std::io;

use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Geometry(_) | Error::Format(_) => 2,
            Error::Numerical(_) | Error::Shape(_) | Error::Metric(_) => 3,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::Shape(format!(
        "{what}: expected {}x{}, got {}x{}",
        expected.0, expected.1, got.0, got.1
    ))
}
