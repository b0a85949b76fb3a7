use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values encountered in {0}")]
    NonFinite(String),

    #[error("checkpoint provenance mismatch: expected {expected}, found {found}")]
    Provenance { expected: String, found: String },

    #[error("corrupt or unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest error in {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("split plan error: {0}")]
    Split(String),

    #[error("metric undefined: {0}")]
    DegenerateMetric(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable discriminant, used by the CLI error object.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Provenance { .. } => "provenance",
            Error::Checkpoint(_) => "checkpoint",
            Error::Manifest { .. } => "manifest",
            Error::Split(_) => "split",
            Error::DegenerateMetric(_) => "degenerate_metric",
            Error::Training(_) => "training",
            Error::Image(_) => "image",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
