//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid layer configuration: {0}")]
    InvalidLayer(String),

    #[error("empty mask: no positive pixels to bound")]
    EmptyMask,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }

    /// True for errors caused by malformed or missing input data rather than
    /// numeric failures. The CLI maps these onto distinct exit codes.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
