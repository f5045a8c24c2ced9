use thiserror::Error;

/// Failure modes shared by every estimator in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("rank-deficient design; collinear or absorbed columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no convergence after {iterations} iterations (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("likelihood maximisation stalled after {iterations} iterations; log-likelihood trace {trace:?}")]
    LikelihoodNoConvergence { iterations: usize, trace: Vec<f64> },
    #[error("unknown column or key `{0}`")]
    UnknownColumn(String),
}

pub type Result<T> = std::result::Result<T, EstimationError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(EstimationError::InvalidInput(msg.into()))
}
