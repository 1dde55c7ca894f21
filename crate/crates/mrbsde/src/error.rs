//! Error type shared by all solver stages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MrbsdeError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("scenario rejected by validation: {check}: {detail}")]
    ValidationFailed { check: String, detail: String },

    /// The upper bracket search for the reflection operator ran past its cap,
    /// meaning the empirical mean of `l(t, x + eta)` never becomes
    /// non-negative on `[0, cap]`.
    #[error("E[l(t,.+eta)] never non-negative at t={t} (bracket cap {cap:.1e} exceeded)")]
    BracketExceeded { t: f64, cap: f64 },

    #[error("reflection value {value} at index {index} is negative")]
    NegativeReflection { index: usize, value: f64 },

    #[error("rank-deficient regression at step {step} (condition number {cond:.3e})")]
    RankDeficient { step: usize, cond: f64 },

    #[error("no contractive window for declared constants")]
    NoContractiveWindow,

    #[error("no empirical contraction: residuals {residuals:?}")]
    NoContraction { residuals: Vec<f64> },

    #[error("window {index} failed: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<MrbsdeError>,
    },

    #[error("unsupported terminal kind: {0}")]
    UnsupportedTerminal(String),
}

pub type Result<T> = std::result::Result<T, MrbsdeError>;
