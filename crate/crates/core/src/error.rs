use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A formula was evaluated outside its domain (index condition,
    /// nonpositive normalizer, and similar).
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested verification does not apply to the classified regime.
    #[error("regime precondition: {0}")]
    Regime(String),

    #[error("checkpoint {0} was not recorded in this sample")]
    MissingCheckpoint(u64),

    #[error("per-step diagnostics were not recorded for this sample")]
    MissingDiagnostics,

    #[error("degenerate variance {0} (must be positive)")]
    DegenerateVariance(f64),

    #[error("not enough samples: got {got}, need at least {need}")]
    NotEnoughSamples { got: usize, need: usize },

    #[error("resource budget exceeded: {0}")]
    BudgetExceeded(String),
}

pub type Result<T> = std::result::Result<T, Error>;
