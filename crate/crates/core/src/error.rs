//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building, simulating or analysing a field.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar parameter lies outside its admissible range.
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: String,
    },

    /// A request that is well-formed but outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A moment requested for a law that does not have it.
    #[error("moment of order {order} diverges for this volume law")]
    DivergentMoment { order: f64 },

    /// Objects of different dimensions were combined.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The operation is not available in this dimension.
    #[error("operation `{what}` is not supported in dimension {d}")]
    UnsupportedDimension { what: &'static str, d: usize },

    /// A singular point of a kernel was evaluated.
    #[error("kernel evaluated at its singularity (x = 0)")]
    Singularity,

    /// Adaptive quadrature exhausted its budget before meeting the tolerance.
    #[error(
        "quadrature failed for {what}: estimate {estimate:.6e}, error {error:.3e}, \
         tolerance {tolerance:.3e} after {intervals} subintervals"
    )]
    Quadrature {
        what: String,
        estimate: f64,
        error: f64,
        tolerance: f64,
        intervals: usize,
    },

    /// A Gram matrix could not be factorised even with the maximal diagonal jitter.
    #[error("Gram matrix is not positive semi-definite (failed with jitter {jitter:.3e}, min pivot {pivot:.3e})")]
    IndefiniteGram { jitter: f64, pivot: f64 },

    /// A scaling grid is malformed.
    #[error("invalid grid: {0}")]
    Grid(String),

    /// The simulated support window does not cover the test measure.
    #[error("window does not cover the support of the test measure: {0}")]
    WindowTooSmall(String),

    /// A covariance was requested in a regime where it is infinite.
    #[error("covariance is infinite in the {0} regime")]
    InfiniteVariance(String),

    /// A statistical routine received too few samples.
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    /// Malformed configuration or measure description.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            value,
            reason: reason.into(),
        }
    }
}
