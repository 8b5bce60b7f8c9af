//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures reported by model construction, estimation and experiment runs.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The dataset does not contain enough transitions for the requested look-ahead.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A linear system is singular or too badly conditioned to be trusted.
    #[error("ill-conditioned linear system (condition estimate {estimate:.3e})")]
    IllConditioned {
        /// Ratio of the largest to the smallest pivot magnitude.
        estimate: f64,
    },

    /// The rank-one recursion hit a non-positive normalising denominator.
    #[error("stochastic approximation breakdown at step {step}: denominator {denominator:.3e}")]
    Breakdown {
        /// Zero-based step index where the breakdown occurred.
        step: usize,
        /// Value of the normalising denominator at that step.
        denominator: f64,
    },

    /// A root search did not find a sign change inside its bracket.
    #[error("no crossing in bracket [{lo:.3e}, {hi:.3e}]")]
    NoCrossing {
        /// Lower end of the bracket.
        lo: f64,
        /// Upper end of the bracket.
        hi: f64,
    },

    /// A configuration file or command-line value could not be interpreted.
    #[error("configuration error: {0}")]
    Config(String),

    /// Grid sizes or vector lengths do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// CSV serialisation failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
