use thiserror::Error;

/// Errors raised by the samplers, models and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite value in input: {0}")]
    NonFinite(String),

    #[error("poisoned chain at iteration {iteration}: {reason}")]
    PoisonedChain { iteration: u64, reason: String },

    #[error("step size {delta} exceeds the stability bound {bound}")]
    StepSizeTooLarge { delta: f64, bound: f64 },

    #[error("divergent chain: |R1(z)| = {r1_abs} >= 1 on axis {axis}")]
    Divergent { axis: usize, r1_abs: f64 },

    #[error("accuracy unreachable: asymptotic floor {floor} exceeds threshold {threshold}")]
    UnreachableAccuracy { floor: f64, threshold: f64 },

    #[error("gradient budgets differ: {reference} vs {candidate}")]
    BudgetMismatch { reference: u64, candidate: u64 },

    #[error("degenerate series: {0}")]
    Degenerate(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
