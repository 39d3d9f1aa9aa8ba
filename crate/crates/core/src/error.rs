use crate::types::CellId;

/// Errors raised by the twin, the trainer, the simulator and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("divergence domain violation: {0}")]
    Domain(String),

    #[error("rejected record: {0}")]
    RejectedRecord(String),

    #[error("invalid configuration `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("no live codevector carries label {0}")]
    Unassignable(CellId),

    #[error("model has no codevectors")]
    EmptyModel,

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("snapshot version {found} is not supported (expected {expected})")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
