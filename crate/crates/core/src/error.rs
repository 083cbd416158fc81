use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the search engines, the device simulator and dataset I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("device memory exceeded: {required} bytes required, {available} bytes available")]
    CapacityExceeded { required: u64, available: u64 },

    #[error(
        "chunk of {rows} points ({bytes} bytes) does not fit a {capacity}-byte chunk buffer; \
         use at least {min_chunks} chunks"
    )]
    ChunkTooLarge {
        rows: usize,
        bytes: u64,
        capacity: u64,
        min_chunks: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline hazard: {0}")]
    Hazard(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("device {device} failed: {message}")]
    Device { device: usize, message: String },

    #[error("parse error in {path:?} at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("result digests disagree: {0}")]
    DigestMismatch(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
