//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had a different shape than the operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A gradient or loss value was NaN or infinite.
    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    /// A forward cache was produced by a network with different layer shapes.
    #[error("stale forward cache: network layer shapes changed since the cache was built")]
    StaleCache,

    /// Sequence/tree sizes must be powers of two within the supported depth.
    #[error("invalid sequence length {n}: must be a power of two <= {max}")]
    InvalidLength { n: usize, max: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Byte-level parse failure, with the offset where it was detected.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
