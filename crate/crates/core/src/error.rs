use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
///
/// The variants fall into the four categories the CLI exposes as exit codes:
/// usage (shape, config, usage), I/O and format, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape(_) | Error::Usage(_) | Error::Config(_) => ErrorKind::Usage,
            Error::Io { .. } | Error::Format(_) => ErrorKind::Io,
            Error::Numeric(_) => ErrorKind::Numeric,
        }
    }

    /// Process exit code: 1 usage, 2 I/O or format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Io => 2,
            ErrorKind::Numeric => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}

pub(crate) use shape_err;
pub(crate) use usage_err;
