use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch{}: {reason}", .layer.map(|l| format!(" in layer {l}")).unwrap_or_default())]
    Dimension { layer: Option<usize>, reason: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}: format error at byte offset {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("missing dataset file {}", .0.display())]
    MissingData(PathBuf),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(layer: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Dimension {
            layer,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
