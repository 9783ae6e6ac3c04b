//! Synthetic stimulus-response datasets.

use bayes_actor::actor::{
    optimal_action_closed_form, sample_measurement, sample_response, sample_stimulus_and_measurement, ActorParams,
    CostFamily, Dataset, Trial,
};
use bayes_actor::amortizer::AmortizerNetwork;
use bayes_actor::oracle::{solve_optimal_action, OracleConfig};
use bayes_actor::rng::{derive_seed, rng_for};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::load_network;
use crate::output::Artifacts;
use crate::spec::{ExperimentSpec, Solver};

/// A resolved source of optimal actions.
#[derive(Clone, Copy, Debug)]
pub enum ActionSolver<'a> {
    ClosedForm,
    Network(&'a AmortizerNetwork),
    Oracle(&'a OracleConfig),
}

impl<'a> ActionSolver<'a> {
    pub fn resolve(
        choice: Solver,
        family: CostFamily,
        network: Option<&'a AmortizerNetwork>,
        oracle: &'a OracleConfig,
    ) -> Result<Self> {
        let net = || match network {
            Some(n) if n.family() != family => {
                Err(bayes_actor::Error::FamilyMismatch { expected: family, found: n.family() }.into())
            }
            Some(n) => Ok(ActionSolver::Network(n)),
            None => Err(CliError::MissingNetwork { family }),
        };
        match choice {
            Solver::Auto if family.has_closed_form() => Ok(ActionSolver::ClosedForm),
            Solver::Auto if network.is_some() => net(),
            Solver::Auto | Solver::Oracle => Ok(ActionSolver::Oracle(oracle)),
            Solver::Network => net(),
            Solver::ClosedForm if family.has_closed_form() => Ok(ActionSolver::ClosedForm),
            Solver::ClosedForm => Err(CliError::Input(format!("{family} has no closed-form action"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActionSolver::ClosedForm => "closed_form",
            ActionSolver::Network(_) => "network",
            ActionSolver::Oracle(_) => "oracle",
        }
    }

    /// The optimal action; `stream` seeds the oracle's noise.
    pub fn action(&self, params: &ActorParams, m: f64, stream: u64) -> Result<f64> {
        Ok(match self {
            ActionSolver::ClosedForm => optimal_action_closed_form(params, m).expect("resolved for a closed form")?,
            ActionSolver::Network(net) => net.forward(params, m)?,
            ActionSolver::Oracle(cfg) => {
                solve_optimal_action(params, m, &cfg.with_seed(derive_seed(cfg.seed, stream)))?
            }
        })
    }
}

/// Trial `i` draws from `rng_for(seed, i)`: the stimulus (from the actor's
/// prior, or `stimuli[i % len]`), `m ~ LogNormal(s, sigma)`, then
/// `r ~ LogNormal(a*(m), sigma_r)`.
pub fn simulate_dataset(
    truth: &ActorParams,
    n_trials: usize,
    stimuli: &[f64],
    solver: &ActionSolver,
    seed: u64,
) -> Result<Dataset> {
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let (s, m) = if stimuli.is_empty() {
                sample_stimulus_and_measurement(truth, &mut rng)
            } else {
                let s = stimuli[i % stimuli.len()];
                (s, sample_measurement(s, truth.sigma, &mut rng))
            };
            let a = solver.action(truth, m, i as u64)?;
            let r = sample_response(a, truth.sigma_r, rng.sample(StandardNormal))?;
            Ok(Trial::new(s, r)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(trials))
}

#[derive(Serialize)]
struct TruthRecord<'a> {
    family: CostFamily,
    params: &'a ActorParams,
    solver: &'static str,
    n_trials: usize,
    stimuli: &'a [f64],
}

/// `simulate`: `data.csv` and `truth.json`.
pub fn run(spec: &ExperimentSpec) -> Result<Artifacts> {
    spec.validate()?;
    let mut artifacts = Artifacts::new("simulate", spec);
    let network = match &spec.network {
        Some(path) => Some(load_network(path, &mut artifacts)?),
        None => None,
    };
    let solver = ActionSolver::resolve(spec.solver, spec.family, network.as_ref(), &spec.oracle)?;
    let truth = spec.draw_truth(&mut rng_for(spec.seed, u64::MAX))?;
    let data = simulate_dataset(&truth, spec.n_trials, &spec.stimuli, &solver, derive_seed(spec.seed, 0))?;
    artifacts.note("solver", solver.name());
    artifacts.add("data.csv", data.to_csv_string().into_bytes());
    artifacts.add_json(
        "truth.json",
        &TruthRecord {
            family: spec.family,
            params: &truth,
            solver: solver.name(),
            n_trials: spec.n_trials,
            stimuli: &spec.stimuli,
        },
    )?;
    Ok(artifacts)
}
