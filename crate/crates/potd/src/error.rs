use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum PotdError {
    /// A configuration document is internally inconsistent or violates a
    /// protocol constraint (e.g. segment length vs. training-set size).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an API contract (shape mismatch, bad permutation, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Training produced a non-finite value.
    #[error("training error in segment {segment}: non-finite value in {tensor}")]
    Training { segment: usize, tensor: String },

    /// A stored artifact does not match its recorded digest.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PotdError>;
