use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("radius {0} is outside the supported range [0, 6]")]
    RadiusOutOfRange(f64),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported pattern kind `{0}`")]
    UnsupportedPattern(String),

    #[error("no constraints: the sparse blur map has no known pixels")]
    NoConstraints,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("checksum mismatch for {}", path.display())]
    ChecksumMismatch { path: PathBuf },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {}: {source}", path.display())]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Errors raised while decoding the `BMAP` blur-field container.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },

    #[error("invalid dimensions {height}x{width}")]
    BadDimensions { height: u32, width: u32 },

    #[error("radius {value} at element {index} is outside [0, 6]")]
    RadiusOutOfRange { index: usize, value: f32 },
}

impl FormatError {
    /// Stable numeric code, one per failure class.
    pub fn code(&self) -> u8 {
        match self {
            FormatError::BadMagic(_) => 1,
            FormatError::UnsupportedVersion(_) => 2,
            FormatError::Truncated { .. } => 3,
            FormatError::TrailingBytes { .. } => 4,
            FormatError::BadDimensions { .. } => 5,
            FormatError::RadiusOutOfRange { .. } => 6,
        }
    }
}
