use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at step {step} (epoch {epoch}, phase {phase}); batch {batch:?}")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        phase: String,
        batch: Vec<String>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] svbr_core::Error),
}

impl NetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NetError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Checkpoint decoding failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated while reading {0}")]
    Truncated(&'static str),

    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),

    #[error("metadata: {0}")]
    BadMetadata(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("parameter {0} stored twice")]
    DuplicateParam(String),

    #[error("missing parameter {0}")]
    MissingParam(String),

    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("parameter {0} holds a non-finite value")]
    NonFinite(String),
}

impl CheckpointError {
    /// Stable numeric code, one per failure class.
    pub fn code(&self) -> u8 {
        match self {
            CheckpointError::BadMagic(_) => 1,
            CheckpointError::UnsupportedVersion(_) => 2,
            CheckpointError::Truncated(_) => 3,
            CheckpointError::TrailingBytes(_) => 4,
            CheckpointError::BadMetadata(_) => 5,
            CheckpointError::UnknownParam(_) => 6,
            CheckpointError::DuplicateParam(_) => 7,
            CheckpointError::MissingParam(_) => 8,
            CheckpointError::ShapeMismatch { .. } => 9,
            CheckpointError::NonFinite(_) => 10,
        }
    }
}
