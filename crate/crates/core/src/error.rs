use thiserror::Error;

use crate::lp::LpError;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cardinality overflow while computing {0}")]
    Overflow(&'static str),

    #[error("exogenous support has {size} tuples, above the cap of {cap}")]
    SupportTooLarge { size: u128, cap: u128 },

    #[error("policy has no action for reachable state {state:?} at period {period}")]
    UndefinedPolicyState { period: usize, state: Vec<i64> },

    #[error("value surfaces need a single-entry single-exit instance")]
    NotPlanar,

    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
