use thiserror::Error;

/// Errors produced by the estimator and its supporting routines.
#[derive(Debug, Error)]
pub enum SpiceError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("iteration stalled: dual variable is {0}, expected > 0")]
    StalledIteration(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("objective increased at iteration {iteration}: {previous} -> {current}")]
    DescentViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("rank deficient support: {0}")]
    RankDeficient(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpiceError>;
