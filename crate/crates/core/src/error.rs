use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the receptive-field library.
#[derive(Debug, Error)]
pub enum StrfError {
    /// A parameter lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Mutually inconsistent configuration (shapes, widths, dataset layout).
    #[error("configuration error: {0}")]
    Config(String),

    /// A gradient or state became NaN/inf during training.
    #[error("non-finite value at step {step} in {layer}")]
    NonFinite { step: usize, layer: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StrfError>;

impl StrfError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        StrfError::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        StrfError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StrfError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        StrfError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
