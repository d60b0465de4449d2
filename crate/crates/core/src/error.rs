use thiserror::Error;

/// Errors surfaced by estimation, testing, and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("at-risk moment matrix is rank deficient at time {time} (condition {cond:.3e})")]
    RankFailure { time: f64, cond: f64 },

    #[error("fitted hazard is nonpositive for subject {subject} at time {time}")]
    NonPositiveHazard { subject: usize, time: f64 },

    #[error("smoothed hazard for subject {subject} at time {time} is below the positivity floor")]
    HazardFloor { subject: usize, time: f64 },

    #[error("optimizer did not converge after {iterations} iterations (residual norm {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("information matrix is not positive definite")]
    IndefiniteInformation,

    #[error("time window {index} contains no events")]
    EmptyWindow { index: usize },

    #[error("{failed} of {total} bootstrap refits failed (limit 5%)")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
