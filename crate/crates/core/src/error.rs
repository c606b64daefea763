//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GsError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("quaternion norm {norm} is too small to define a rotation")]
    DegenerateRotation { norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("schedule produced an empty view set at iteration {iteration}")]
    EmptyViewSet { iteration: u64 },

    #[error("parse error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { msg: String, line: Option<usize> },

    #[error("truncated payload: header declares {declared} points but payload holds {actual}")]
    TruncatedPayload { declared: usize, actual: usize },

    #[error("unknown format version: {0}")]
    UnknownVersion(String),

    #[error("dataset integrity error: {0}")]
    Integrity(String),

    #[error("non-finite parameter detected at iteration {iteration} in {field}")]
    NonFinite { iteration: u64, field: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    ImageCodec(String),

    #[error("json error: {0}")]
    Json(String),
}

impl GsError {
    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        GsError::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        GsError::Parse {
            msg: msg.into(),
            line: None,
        }
    }

    pub fn parse_at(msg: impl Into<String>, line: usize) -> Self {
        GsError::Parse {
            msg: msg.into(),
            line: Some(line),
        }
    }
}

impl From<image::ImageError> for GsError {
    fn from(e: image::ImageError) -> Self {
        GsError::ImageCodec(e.to_string())
    }
}

impl From<serde_json::Error> for GsError {
    fn from(e: serde_json::Error) -> Self {
        GsError::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GsError>;
