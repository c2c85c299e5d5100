//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid vector pool: {0}")]
    InvalidPool(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("index is not trained")]
    Untrained,

    #[error("unknown id {0}")]
    UnknownId(u64),

    #[error("labeled pool error: {0}")]
    LabeledPool(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
