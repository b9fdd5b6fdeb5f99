use thiserror::Error;

/// Errors raised by the lab.
///
/// The variants split along the lines the CLI cares about: bad input
/// (including contract violations such as non-reversible kernels) versus
/// resource budgets that would be exceeded.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violated: {what} (residual {residual:e})")]
    Contract { what: String, residual: f64 },

    #[error("state budget exceeded: {what} needs {needed} states, budget is {budget}")]
    Budget {
        what: String,
        needed: u128,
        budget: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Default cap on enumerated state-space sizes.
pub const DEFAULT_STATE_BUDGET: usize = 10_000_000;

/// Fails with [`Error::Budget`] when `needed` exceeds `budget`.
pub(crate) fn check_budget(what: &str, needed: u128, budget: usize) -> Result<()> {
    if needed > budget as u128 {
        return Err(Error::Budget {
            what: what.to_string(),
            needed,
            budget,
        });
    }
    Ok(())
}
