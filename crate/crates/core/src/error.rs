use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("capacity exceeded: requested {requested} patterns, only {available} available")]
    Capacity { requested: usize, available: usize },

    #[error("cannot construct Hadamard matrix: {0}")]
    Construction(String),

    #[error("ingestion failed for {} file(s): {}", offenders.len(), format_offenders(offenders))]
    Ingestion { offenders: Vec<(PathBuf, String)> },

    #[error("optional dataset unavailable: {0}")]
    DatasetUnavailable(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("digest mismatch: expected {expected}, computed {actual}")]
    Digest { expected: String, actual: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_offenders(offenders: &[(PathBuf, String)]) -> String {
    offenders
        .iter()
        .map(|(p, why)| format!("{} ({why})", p.display()))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
