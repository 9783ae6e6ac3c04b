//! Bayesian observer-actor models of perception and action, a neural
//! amortizer of their optimal actions, and gradient-based inference of the
//! model parameters from stimulus-response data.

pub mod actor;
pub mod amortizer;
pub mod error;
pub mod format;
pub mod inference;
pub mod mc;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
