use thiserror::Error;

/// Errors produced by tensor algebra, transport solvers, and the experiment
/// harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("mass mismatch: source sums to {source_sum}, target sums to {target_sum}")]
    MassMismatch { source_sum: f64, target_sum: f64 },

    #[error("instance size {size} exceeds exact-solver limit {limit}")]
    OracleLimit { size: usize, limit: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
