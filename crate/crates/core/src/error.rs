use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A per-user interference-plus-noise matrix could not be factorized.
    #[error("ill-conditioned receiver problem for user {user}: {detail}")]
    Conditioning { user: usize, detail: String },

    #[error("downlink SINR targets are infeasible: {0}")]
    InfeasibleTargets(String),

    #[error("fronthaul budget admits no user per AP (alpha2 = {alpha2}, budget = {budget} bits/sample)")]
    InfeasibleBudget { alpha2: u32, budget: f64 },

    #[error("user assignment failed: user {user} cannot be served without orphaning another user")]
    AssignmentFailure { user: usize },

    #[error("internal solver failure: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
