//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A linear solve or factorization failed; carries a snapshot of the
    /// estimator state for diagnosis.
    #[error("numerical failure in {context} (iteration {iteration}, {active} active columns) {detail}")]
    Numerical {
        context: &'static str,
        iteration: usize,
        active: usize,
        detail: String,
    },

    /// Aggregation was asked to pool an empty or inconsistent record set.
    #[error("invalid record set: {0}")]
    InvalidRecords(String),

    /// An output file already exists and overwrite was not forced.
    #[error("output file {0} exists; pass force to overwrite")]
    OutputExists(std::path::PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}
