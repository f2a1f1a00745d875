use thiserror::Error;

use crate::harness::RunMetrics;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailure { attempts: usize, reason: String },

    #[error("degenerate instance: no state-action pair has a strictly positive gap")]
    DegenerateInstance,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("round budget exhausted after {rounds} rounds (mixture gap {mixture_gap})")]
    BudgetExhausted {
        rounds: usize,
        mixture_gap: f64,
        partial: Box<RunMetrics>,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
