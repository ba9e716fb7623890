use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CofError>;

#[derive(Debug, Error)]
pub enum CofError {
    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("failed to encode {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid image data: {0}")]
    InvalidImage(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no co-occurrence statistics were collected")]
    EmptyStatistics,

    #[error("scribble set has no foreground strokes")]
    EmptyScribbles,

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("malformed matrix dump: {0}")]
    MalformedDump(String),
}

impl CofError {
    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        CofError::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        CofError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
