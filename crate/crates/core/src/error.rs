use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("property violation: {0}")]
    Property(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Errors raised while decoding on-disk artifacts (feature files,
/// checkpoints, manifests).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: bad magic {found:?}, expected {expected:?}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{}: unsupported version {found}, expected {expected}", path.display())]
    BadVersion {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{}: truncated, expected {expected} bytes but found {found}", path.display())]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{}: non-finite value at index {index}", path.display())]
    NonFinite { path: PathBuf, index: usize },

    #[error("{}: malformed header: {message}", path.display())]
    Header { path: PathBuf, message: String },

    #[error("{}: shape mismatch: {message}", path.display())]
    Shape { path: PathBuf, message: String },

    #[error("{}: constrained weight {value} at {location} is below the positivity floor", path.display())]
    ConstrainedWeight {
        path: PathBuf,
        location: String,
        value: f32,
    },

    #[error("{}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

/// Coarse classification used by the command-line front end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Property,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parameter(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Property(_) | Error::Format(FormatError::ConstrainedWeight { .. }) => {
                ErrorKind::Property
            }
            Error::Format(FormatError::NonFinite { .. }) => ErrorKind::Numeric,
            Error::Dimension(_)
            | Error::Validation(_)
            | Error::UndefinedCorrelation(_)
            | Error::Format(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }
}
