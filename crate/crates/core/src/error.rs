use thiserror::Error;

/// Errors raised by the solvers and the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown flow name `{0}`")]
    UnknownFlow(String),

    #[error("flow {flow} does not take parameter `{param}`")]
    UnexpectedParameter { flow: &'static str, param: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("period mismatch: M*dt = {got} but the flow period is {expected}")]
    PeriodMismatch { expected: f64, got: f64 },

    #[error("rank-deficient least-squares design: {0}")]
    RankDeficient(String),

    #[error("no convergence after {iterations} iterations: {what}")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
