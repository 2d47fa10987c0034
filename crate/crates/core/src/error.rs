//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. Numerical preconditions are checked eagerly so
/// failures carry enough context to reconstruct the offending call.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: expected dimension {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("not SPD: factorization failed at pivot {pivot}")]
    NotSpd { pivot: usize },

    #[error("step-size violates contraction: eta = {eta} must lie in (0, {limit})")]
    StepSize { eta: f64, limit: f64 },

    #[error("invalid weights: {detail}")]
    InvalidWeights { detail: String },

    #[error("invalid hypergradient: {detail}")]
    InvalidHypergrad { detail: String },

    #[error("empty history")]
    EmptyHistory,

    #[error("bad generator params: {detail}")]
    BadGeneratorParams { detail: String },

    #[error("theorem regime not met: {inequality}")]
    RegimeViolation { inequality: String },

    #[error("numerical abort: non-finite value in {context}")]
    NonFinite { context: String },

    #[error("interior margin violated: need distance > {needed} from the simplex boundary, have {have}")]
    BoundaryMargin { needed: f64, have: f64 },

    #[error("outer oracle failed: {detail}")]
    OracleFailure { detail: String },

    #[error("config error: {detail}")]
    Config { detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
