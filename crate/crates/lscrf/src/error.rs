//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph construction, training, inference and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph error: {0}")]
    Graph(String),

    #[error("label {label} out of range for {r} labels")]
    LabelOutOfRange { label: usize, r: usize },

    #[error("empty sample list")]
    EmptySamples,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("graph contains a cycle; operation requires a forest")]
    CyclicGraph,

    #[error("state space too large: r^m = {states} exceeds guard {guard}")]
    StateSpaceTooLarge { states: f64, guard: u64 },

    #[error("matrix is singular at lambda = 0; add regularization")]
    SingularGram,

    #[error("marginal tables inconsistent beyond tolerance (max violation {0:.3e})")]
    InconsistentMarginals(f64),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance has labels missing but the operation requires ground truth")]
    MissingLabels,

    #[error("instance has isolated nodes but the model was trained without unary regressors; retrain with unary_fallback enabled")]
    MissingUnaryRegressors,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("unknown {what}: {value}")]
    Unknown { what: &'static str, value: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
