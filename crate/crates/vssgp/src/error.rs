use thiserror::Error;

/// Errors produced by model construction, bound evaluation, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// A field that must be finite contained NaN or infinity.
    #[error("non-finite value at {path}")]
    NonFinite { path: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Factorization failed even after the jitter escalation sequence.
    #[error("cholesky factorization failed after jitter escalation (smallest eigenvalue ~ {min_eigenvalue:.3e})")]
    CholeskyFailure { min_eigenvalue: f64 },

    /// The objective evaluated to NaN or infinity.
    #[error("non-finite bound value (parameter block: {block})")]
    NonFiniteBound { block: String },

    #[error("dataset must contain at least one point")]
    EmptyData,

    #[error("model file error: {0}")]
    ModelFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
