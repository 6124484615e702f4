use std::path::PathBuf;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor axis has a size the operation cannot accept.
    #[error("dimension error on {axis}: {message}")]
    Dimension { axis: String, message: String },

    /// A hyperparameter or argument is out of its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The caller asked for something that cannot be done with the given inputs.
    #[error("usage error: {0}")]
    Usage(String),

    /// A dataset file is missing, unreadable or inconsistent.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFinite { epoch: usize, step: usize, value: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Dimension {
            axis: axis.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Dimension { .. }
            | Error::Parameter(_)
            | Error::Usage(_)
            | Error::Ingestion(_)
            | Error::Version { .. }
            | Error::Integrity(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Image(_) => true,
            Error::Frame { source, .. } => source.is_user_error(),
            Error::NonFinite { .. } | Error::Tensor(_) => false,
        }
    }
}
