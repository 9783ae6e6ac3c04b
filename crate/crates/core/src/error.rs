use thiserror::Error;

use crate::actor::{ActorParams, CostFamily};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} must be {requirement}, got {value}")]
    Domain { what: &'static str, requirement: &'static str, value: f64 },

    #[error("cost family mismatch: expected {expected}, found {found}")]
    FamilyMismatch { expected: CostFamily, found: CostFamily },

    #[error("non-finite training loss at batch element {index} (params {params:?}, m = {m})")]
    NonFiniteLoss { index: usize, params: ActorParams, m: f64 },

    #[error(
        "action search did not converge after {iterations} iterations on [{low}, {high}] \
         (last |dL/da| = {gradient:e})"
    )]
    NoConvergence { iterations: usize, low: f64, high: f64, gradient: f64 },

    #[error("evaluation entry {index} failed (params {params:?}, m = {m}): {source}")]
    EvaluationEntry {
        index: usize,
        params: ActorParams,
        m: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("diagnostics need at least 2 chains with 4 draws each, got {chains} x {draws}")]
    InsufficientDraws { chains: usize, draws: usize },

    #[error("log density not finite at any of {attempts} initial points")]
    Initialization { attempts: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, requirement: &'static str, value: f64) -> Self {
        Error::Domain { what, requirement, value }
    }
}

/// Checks `value > 0` and finite.
pub(crate) fn ensure_positive(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::domain(what, "positive and finite", value))
    }
}
