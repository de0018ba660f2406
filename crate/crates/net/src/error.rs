//! Errors for data ingestion, checkpointing, and training.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] warpgen_core::CoreError),

    #[error("data error: {0}")]
    Data(String),

    #[error("manifest error at {path}: {msg}")]
    Manifest { path: String, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint config hash mismatch: archive has {archive}, current config hashes to {current}")]
    ConfigHash { archive: String, current: String },

    #[error("non-finite loss in term `{term}` at iteration {iteration}: {report}")]
    NonFinite {
        term: String,
        iteration: u64,
        report: String,
    },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
