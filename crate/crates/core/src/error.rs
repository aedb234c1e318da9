use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while decoding one of the binary or netpbm file formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("magic mismatch: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },
    #[error("truncated input: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("dimension overflow: {0}")]
    DimOverflow(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("{count} unexpected trailing bytes")]
    TrailingBytes { count: usize },
    #[error("label {label} out of range (max {max})")]
    LabelOutOfRange { label: u32, max: u32 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point ({x}, {y}, {z}) lies outside the field bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },
    #[error("frame {0} is missing from the auxiliary window")]
    MissingFrame(i64),
    #[error("ray {index}: {source}")]
    Ray {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("non-finite loss at iteration {iteration} (rays {rays:?})")]
    NonFinite { iteration: u64, rays: Vec<usize> },
    #[error("render output carries no per-sample intermediates")]
    MissingIntermediates,
    #[error("format error in {}: {source}", path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<memory>".into()))]
    Format {
        path: Option<PathBuf>,
        #[source]
        source: FormatError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<FormatError> for Error {
    fn from(source: FormatError) -> Self {
        Error::Format { path: None, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
