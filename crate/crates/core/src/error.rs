use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ApnetError>;

#[derive(Debug, Error)]
pub enum ApnetError {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("split violation: {0}")]
    SplitViolation(String),

    #[error("size mismatch in {file}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl ApnetError {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        ApnetError::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ApnetError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by invalid content.
    pub fn is_io(&self) -> bool {
        matches!(self, ApnetError::Io { .. } | ApnetError::MissingFile(_))
    }
}
