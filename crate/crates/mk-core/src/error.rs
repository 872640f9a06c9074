use std::path::PathBuf;

use thiserror::Error;

/// Errors produced at the crate's fallible boundaries.
///
/// Shape mismatches on hot paths are programmer errors and panic instead;
/// see the crate-level docs.
#[derive(Debug, Error)]
pub enum MkError {
    /// A configuration field failed validation. The message names the field.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A data file could not be read or has the wrong size.
    #[error("ingestion failed for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    /// A data file parsed but its contents violate the format.
    #[error("corrupt data in {path}: {reason}")]
    CorruptData { path: PathBuf, reason: String },

    /// A gradient entry was NaN or infinite; training cannot continue.
    #[error("non-finite gradient ({value}) in layer {layer} {component} at flat index {index}")]
    NonFiniteGradient {
        layer: usize,
        component: &'static str,
        index: usize,
        value: f64,
    },

    /// A checkpoint file is malformed or inconsistent with its header.
    #[error("checkpoint error for {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MkError>;
