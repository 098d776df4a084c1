//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An array had the wrong dimensions for the requested operation.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: String,
        got: String,
    },

    /// A sequence was too short for the requested operation.
    #[error("{what} requires at least {min} frames, got {got}")]
    TooShort { what: String, min: usize, got: usize },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A required external resource (weights, vocab, corpus) is missing.
    #[error("missing resource {path}: {detail}")]
    Resource { path: PathBuf, detail: String },

    /// Corpus ingestion failed for the listed items.
    #[error("corpus ingest failed for {} item(s): {}", .items.len(), summarize(.items))]
    Ingest { items: Vec<(String, String)> },

    /// A container or checkpoint file failed validation.
    #[error("invalid container {path}: {detail}")]
    Container { path: PathBuf, detail: String },

    /// Checkpoint is incompatible with the rest of the run configuration.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Non-finite value encountered where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("zip archive error: {0}")]
    Zip(String),
}

impl From<zip::result::ZipError> for Error {
    fn from(e: zip::result::ZipError) -> Self {
        Error::Zip(e.to_string())
    }
}

fn summarize(items: &[(String, String)]) -> String {
    let mut s = items
        .iter()
        .take(5)
        .map(|(id, why)| format!("{id}: {why}"))
        .collect::<Vec<_>>()
        .join("; ");
    if items.len() > 5 {
        s.push_str("; ...");
    }
    s
}

impl Error {
    pub fn shape(what: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
