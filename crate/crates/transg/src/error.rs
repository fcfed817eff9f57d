use thiserror::Error;

/// Errors surfaced by any module of the crate.
#[derive(Debug, Error)]
pub enum TransgError {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation contract was violated (bad axis, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is outside its valid range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset files or records failed validation.
    #[error("schema error: {0}")]
    Schema(String),

    /// A data file could not be parsed.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Batch sampling could not satisfy its invariants.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Checkpoint version or layout is incompatible.
    #[error("checkpoint incompatibility: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}: {value}")]
    Divergence { step: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TransgError>;
