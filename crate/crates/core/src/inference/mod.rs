//! Posterior inference over actor parameters from stimulus-response data.

pub mod diagnostics;
pub mod model;
pub mod nuts;
pub mod posterior;
pub mod priors;
pub mod stats;

pub use diagnostics::{diagnose, ParamDiagnostics};
pub use model::{log_joint, ActionModel, ActorPosterior, AnalyticalAction, LatentStrategy};
pub use nuts::{run_chain, run_chains, ChainOutput, LogDensity, MetricKind, SamplerConfig};
pub use posterior::{
    posterior_predictive, sample_posterior, write_band_csv, BandRow, ChainStats, ParamSummary, PosteriorSamples,
    PosteriorSummary, PredictiveDraws,
};
pub use priors::{Constrained, InferencePriors, Prior};
pub use stats::{hdi_region, jaccard, ks_test, Grid2d, HdiRegion};
