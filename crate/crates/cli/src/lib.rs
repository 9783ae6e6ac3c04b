//! Batch experiments over Bayesian actor models: dataset simulation, network
//! training and evaluation, posterior inference, and recovery and
//! identifiability studies. Every command computes all of its outputs in
//! memory first and writes nothing on failure.

pub mod error;
pub mod infer;
pub mod network;
pub mod output;
pub mod simulate;
pub mod spec;
pub mod study;

use std::path::Path;

use bayes_actor::actor::Dataset;
use bayes_actor::amortizer::AmortizerNetwork;
use bayes_actor::inference::{ActionModel, AnalyticalAction};
use bayes_actor::oracle::EvaluationSet;

pub use error::{CliError, Result};
pub use output::Artifacts;
pub use spec::{ExperimentSpec, Solver};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    Evaluate,
    Infer,
    Recover,
    Identifiability,
}

/// Runs `command`, returning its outputs without writing them.
pub fn run(command: Command, spec: &ExperimentSpec) -> Result<Artifacts> {
    match command {
        Command::Simulate => simulate::run(spec),
        Command::Train => network::run_train(spec),
        Command::Evaluate => network::run_evaluate(spec),
        Command::Infer => infer::run(spec),
        Command::Recover => study::run_recover(spec),
        Command::Identifiability => study::run_identifiability(spec),
    }
}

pub(crate) fn load_network(path: &Path, artifacts: &mut Artifacts) -> Result<AmortizerNetwork> {
    artifacts.input(path)?;
    Ok(AmortizerNetwork::load(path)?)
}

pub(crate) fn load_eval_set(path: &Path, artifacts: &mut Artifacts) -> Result<EvaluationSet> {
    artifacts.input(path)?;
    Ok(EvaluationSet::from_path(path)?)
}

/// The dataset and its SHA-256.
pub(crate) fn load_dataset(path: &Path, artifacts: &mut Artifacts) -> Result<(Dataset, String)> {
    let sha = artifacts.input(path)?;
    Ok((Dataset::from_path(path)?, sha))
}

/// The action model used for inference.
pub enum LoadedModel {
    Analytical(AnalyticalAction),
    Network { network: AmortizerNetwork, sha256: String },
}

impl LoadedModel {
    pub fn as_model(&self) -> &dyn ActionModel {
        match self {
            LoadedModel::Analytical(a) => a,
            LoadedModel::Network { network, .. } => network,
        }
    }

    pub fn network(&self) -> Option<&AmortizerNetwork> {
        match self {
            LoadedModel::Analytical(_) => None,
            LoadedModel::Network { network, .. } => Some(network),
        }
    }

    pub fn sha256(&self) -> Option<&str> {
        match self {
            LoadedModel::Analytical(_) => None,
            LoadedModel::Network { sha256, .. } => Some(sha256),
        }
    }
}

/// The closed form when `spec.analytical` is set, else the network checkpoint
/// of the configured family.
pub(crate) fn load_model(spec: &ExperimentSpec, artifacts: &mut Artifacts) -> Result<LoadedModel> {
    if spec.analytical {
        return Ok(LoadedModel::Analytical(AnalyticalAction::new(spec.family)?));
    }
    let path = spec.network.as_ref().ok_or(CliError::MissingNetwork { family: spec.family })?;
    let sha256 = artifacts.input(path)?;
    let network = AmortizerNetwork::load(path)?;
    if network.family() != spec.family {
        return Err(bayes_actor::Error::FamilyMismatch { expected: spec.family, found: network.family() }.into());
    }
    Ok(LoadedModel::Network { network, sha256 })
}
