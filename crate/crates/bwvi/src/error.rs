use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("step too large: I - eta*S is numerically singular (eta = {eta})")]
    StepTooLarge { eta: f64 },

    #[error("non-finite importance weight encountered (log w = {0})")]
    NonFiniteWeight(f64),

    #[error("evaluation point has zero importance weight (log w = -inf)")]
    InvalidPoint,

    #[error("target does not provide a Hessian")]
    HessianUnavailable,

    #[error("replicate standard deviation is zero in coordinate {coord}; SNR undefined")]
    DegenerateVariance { coord: usize },

    #[error("column '{0}' has zero variance; cannot standardize")]
    ZeroVariance(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("non-numeric value '{value}' in column '{column}'")]
    NonNumeric { column: String, value: String },

    #[error("parse error: {0}")]
    ParseError(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
