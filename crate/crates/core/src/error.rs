use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("payload size mismatch: header declares {expected} bytes, file holds {actual}")]
    PayloadMismatch { expected: u64, actual: u64 },

    #[error("non-finite value in {tensor} tensor at element {index} (byte offset {offset})")]
    NonFinite {
        tensor: &'static str,
        index: usize,
        offset: usize,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("threshold {0} outside (-1, 1]")]
    InvalidThreshold(f64),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid pooling: {0}")]
    InvalidPool(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
