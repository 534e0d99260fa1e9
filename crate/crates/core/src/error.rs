use thiserror::Error;

/// Errors raised by the accountant.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PldError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("privacy loss {loss} lies outside the grid range [{lo}, {hi}]; increase L")]
    OutOfGrid { loss: f64, lo: f64, hi: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("exact composition needs {needed} atoms, budget is {budget}")]
    AtomBudgetExceeded { needed: u128, budget: usize },

    #[error("target delta {target} is outside the achieved range [{delta_hi}, {delta_lo}] (delta(lo)={delta_lo}, delta(hi)={delta_hi})")]
    TargetOutOfRange {
        target: f64,
        delta_lo: f64,
        delta_hi: f64,
    },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, PldError>;
