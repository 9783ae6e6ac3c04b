//! Simulation studies: `recover` (parameter recovery MSE) and
//! `identifiability` (confound correlation and the effect of fixing one).

use bayes_actor::actor::{ActorParams, CostFamily, Dataset, ParamName};
use bayes_actor::format::fmt_f64;
use bayes_actor::inference::{hdi_region, ActionModel, Grid2d, PosteriorSamples};
use bayes_actor::rng::{derive_seed, rng_for};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::infer::infer_dataset;
use crate::output::Artifacts;
use crate::simulate::{simulate_dataset, ActionSolver};
use crate::spec::ExperimentSpec;
use crate::{load_model, LoadedModel};

/// Seed of replication `index`: its truth, data and sampler streams derive from it.
pub fn replication_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Ground truth and dataset of one replication.
pub fn replication_data(spec: &ExperimentSpec, solver: &ActionSolver, index: usize) -> Result<(ActorParams, Dataset)> {
    let seed = replication_seed(spec.seed, index);
    let truth = spec.draw_truth(&mut rng_for(seed, u64::MAX))?;
    let data = simulate_dataset(&truth, spec.n_trials, &spec.stimuli, solver, derive_seed(seed, 0))?;
    Ok((truth, data))
}

/// Posterior of replication `index` with `fixed` parameters held at the truth.
fn replication_posterior(
    spec: &ExperimentSpec,
    index: usize,
    truth: &ActorParams,
    data: &Dataset,
    fixed: &[ParamName],
    model: &dyn ActionModel,
) -> Result<PosteriorSamples> {
    let mut rep = ExperimentSpec { seed: replication_seed(spec.seed, index), ..spec.clone() };
    for &p in fixed {
        rep.fix.insert(p.as_str().to_string(), truth.get(p).expect("parameter of the family"));
    }
    infer_dataset(&rep, data, model)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub truth: ActorParams,
    /// Posterior means, canonical order; fixed parameters hold their true value.
    pub estimate: Vec<f64>,
    pub max_rhat: f64,
    pub divergences: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub parameter: ParamName,
    pub mse: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryOutcome {
    pub family: CostFamily,
    pub fixed: Vec<ParamName>,
    pub records: Vec<ReplicationRecord>,
}

impl RecoveryOutcome {
    /// Posterior-mean MSE of every free parameter over the converged replications.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let used: Vec<&ReplicationRecord> = self.records.iter().filter(|r| r.converged).collect();
        self.family
            .param_names()
            .iter()
            .enumerate()
            .filter(|(_, p)| !self.fixed.contains(p))
            .map(|(i, &parameter)| {
                let sq: f64 = used.iter().map(|r| (r.estimate[i] - r.truth.to_vec()[i]).powi(2)).sum();
                AggregateRow {
                    parameter,
                    mse: if used.is_empty() { f64::NAN } else { sq / used.len() as f64 },
                    n_used: used.len(),
                    n_excluded: self.records.len() - used.len(),
                }
            })
            .collect()
    }

    pub fn records_csv(&self) -> Vec<u8> {
        let names = self.family.param_names();
        let mut out = String::from("replication,converged,max_rhat,divergences");
        for p in names {
            out.push_str(&format!(",true_{p},mean_{p}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.index, r.converged, fmt_f64(r.max_rhat), r.divergences));
            for (t, e) in r.truth.to_vec().iter().zip(&r.estimate) {
                out.push_str(&format!(",{},{}", fmt_f64(*t), fmt_f64(*e)));
            }
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn aggregate_csv(&self) -> Vec<u8> {
        let mut out = String::from("parameter,mse,n_used,n_excluded\n");
        for a in self.aggregate() {
            out.push_str(&format!("{},{},{},{}\n", a.parameter, fmt_f64(a.mse), a.n_used, a.n_excluded));
        }
        out.into_bytes()
    }
}

/// Recovery study: simulate with `solver`, infer with `model`.
pub fn recovery(spec: &ExperimentSpec, solver: &ActionSolver, model: &dyn ActionModel) -> Result<RecoveryOutcome> {
    spec.validate()?;
    let fixed = spec.fixed_params()?;
    let records = (0..spec.replications)
        .into_par_iter()
        .map(|index| {
            let (truth, data) = replication_data(spec, solver, index)?;
            let post = replication_posterior(spec, index, &truth, &data, &fixed, model)?;
            let estimate = post.mean_params()?.to_vec();
            Ok(ReplicationRecord {
                index,
                truth,
                estimate,
                max_rhat: post.max_rhat(),
                divergences: post.divergences(),
                converged: post.max_rhat() < bayes_actor::inference::posterior::RHAT_THRESHOLD,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryOutcome { family: spec.family, fixed, records })
}

fn resolve_solver<'a>(spec: &'a ExperimentSpec, model: &'a LoadedModel) -> Result<ActionSolver<'a>> {
    ActionSolver::resolve(spec.solver, spec.family, model.network(), &spec.oracle)
}

/// `recover`: `recovery.csv` (one row per replication) and `recovery_mse.csv`.
pub fn run_recover(spec: &ExperimentSpec) -> Result<Artifacts> {
    spec.validate()?;
    let mut artifacts = Artifacts::new("recover", spec);
    let model = load_model(spec, &mut artifacts)?;
    let solver = resolve_solver(spec, &model)?;
    let outcome = recovery(spec, &solver, model.as_model())?;
    artifacts.note("solver", solver.name());
    artifacts.note("action_model", model.as_model().describe());
    let excluded = outcome.records.iter().filter(|r| !r.converged).count();
    if excluded > 0 {
        artifacts.warnings.push(format!("{excluded} replication(s) excluded for R-hat >= 1.05"));
    }
    artifacts.add("recovery.csv", outcome.records_csv());
    artifacts.add("recovery_mse.csv", outcome.aggregate_csv());
    Ok(artifacts)
}

/// One replication of the identifiability study for the pair `(a, b)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRecord {
    pub index: usize,
    pub truth: ActorParams,
    pub corr: f64,
    /// Absolute posterior-mean errors with both free.
    pub err_a: f64,
    pub err_b: f64,
    /// Error of `a` with `b` fixed at its truth, and vice versa.
    pub err_a_fixed_b: f64,
    pub err_b_fixed_a: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifiabilitySummary {
    pub family: CostFamily,
    pub pair: (ParamName, ParamName),
    /// Parameters fixed at their true values in every run.
    pub fixed: Vec<ParamName>,
    pub replications: usize,
    pub n_used: usize,
    pub mean_abs_corr: f64,
    /// Fraction of converged replications in which fixing `b` lowered the error of `a`.
    pub improved_a_by_fixing_b: f64,
    pub improved_b_by_fixing_a: f64,
}

#[derive(Clone, Debug)]
pub struct IdentifiabilityOutcome {
    pub records: Vec<PairRecord>,
    pub summary: IdentifiabilitySummary,
    /// Unfixed draws of `(a, b)` in replication 0.
    pub draws: (Vec<f64>, Vec<f64>),
}

/// Grid side and smoothing of the 94% HDI contour.
const HDI_GRID: usize = 60;
const HDI_SMOOTHING: f64 = 1.5;

impl IdentifiabilityOutcome {
    pub fn records_csv(&self) -> Vec<u8> {
        let (a, b) = self.summary.pair;
        let mut out = format!(
            "replication,converged,true_{a},true_{b},corr,err_{a},err_{b},err_{a}_fixed_{b},err_{b}_fixed_{a}\n"
        );
        for r in &self.records {
            let truth = |p| fmt_f64(r.truth.get(p).expect("parameter of the family"));
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.index,
                r.converged,
                truth(a),
                truth(b),
                fmt_f64(r.corr),
                fmt_f64(r.err_a),
                fmt_f64(r.err_b),
                fmt_f64(r.err_a_fixed_b),
                fmt_f64(r.err_b_fixed_a)
            ));
        }
        out.into_bytes()
    }

    /// Boundary cells of the 94% HDI of replication 0's unfixed draws.
    pub fn contour_csv(&self) -> Result<Vec<u8>> {
        let (a, b) = self.summary.pair;
        let (x, y) = &self.draws;
        let grid = Grid2d::covering(&[(x, y)], HDI_GRID);
        let region = hdi_region(x, y, grid, 0.94, HDI_SMOOTHING)?;
        let mut out = format!("{a},{b}\n");
        for (px, py) in region.boundary_points() {
            out.push_str(&format!("{},{}\n", fmt_f64(px), fmt_f64(py)));
        }
        Ok(out.into_bytes())
    }

    pub fn draws_csv(&self) -> Vec<u8> {
        let (a, b) = self.summary.pair;
        let mut out = format!("{a},{b}\n");
        for (x, y) in self.draws.0.iter().zip(&self.draws.1) {
            out.push_str(&format!("{},{}\n", fmt_f64(*x), fmt_f64(*y)));
        }
        out.into_bytes()
    }
}

pub fn identifiability(
    spec: &ExperimentSpec,
    solver: &ActionSolver,
    model: &dyn ActionModel,
) -> Result<IdentifiabilityOutcome> {
    spec.validate()?;
    let (a, b) = spec.identifiability_pair()?;
    let base = spec.fixed_params()?;
    if let Some(p) = base.iter().find(|p| **p == a || **p == b) {
        return Err(CliError::Input(format!("{p} is both fixed and part of the identifiability pair")));
    }
    let rhat_ok = |p: &PosteriorSamples| p.max_rhat() < bayes_actor::inference::posterior::RHAT_THRESHOLD;
    let runs = (0..spec.replications)
        .into_par_iter()
        .map(|index| {
            let (truth, data) = replication_data(spec, solver, index)?;
            let with = |p: ParamName| base.iter().copied().chain([p]).collect::<Vec<_>>();
            let free = replication_posterior(spec, index, &truth, &data, &base, model)?;
            let fixed_b = replication_posterior(spec, index, &truth, &data, &with(b), model)?;
            let fixed_a = replication_posterior(spec, index, &truth, &data, &with(a), model)?;
            let t = |p: ParamName| truth.get(p).expect("parameter of the family");
            let record = PairRecord {
                index,
                truth,
                corr: free.corr(a, b)?,
                err_a: (free.mean(a)? - t(a)).abs(),
                err_b: (free.mean(b)? - t(b)).abs(),
                err_a_fixed_b: (fixed_b.mean(a)? - t(a)).abs(),
                err_b_fixed_a: (fixed_a.mean(b)? - t(b)).abs(),
                converged: rhat_ok(&free) && rhat_ok(&fixed_a) && rhat_ok(&fixed_b),
            };
            let draws = if index == 0 { Some((free.param_draws(a)?, free.param_draws(b)?)) } else { None };
            Ok((record, draws))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut draws = (Vec::new(), Vec::new());
    let mut records = Vec::with_capacity(runs.len());
    for (record, d) in runs {
        if let Some(d) = d {
            draws = d;
        }
        records.push(record);
    }
    let used: Vec<&PairRecord> = records.iter().filter(|r| r.converged).collect();
    let frac = |f: &dyn Fn(&PairRecord) -> bool| {
        if used.is_empty() {
            f64::NAN
        } else {
            used.iter().filter(|r| f(r)).count() as f64 / used.len() as f64
        }
    };
    let summary = IdentifiabilitySummary {
        family: spec.family,
        pair: (a, b),
        fixed: base,
        replications: records.len(),
        n_used: used.len(),
        mean_abs_corr: if used.is_empty() {
            f64::NAN
        } else {
            used.iter().map(|r| r.corr.abs()).sum::<f64>() / used.len() as f64
        },
        improved_a_by_fixing_b: frac(&|r| r.err_a_fixed_b < r.err_a),
        improved_b_by_fixing_a: frac(&|r| r.err_b_fixed_a < r.err_b),
    };
    Ok(IdentifiabilityOutcome { records, summary, draws })
}

/// `identifiability`: `identifiability.csv`, `identifiability.json`,
/// `hdi_contour.csv` and `pair_draws.csv`.
pub fn run_identifiability(spec: &ExperimentSpec) -> Result<Artifacts> {
    spec.validate()?;
    let mut artifacts = Artifacts::new("identifiability", spec);
    let model = load_model(spec, &mut artifacts)?;
    let solver = resolve_solver(spec, &model)?;
    let outcome = identifiability(spec, &solver, model.as_model())?;
    artifacts.note("solver", solver.name());
    artifacts.note("action_model", model.as_model().describe());
    let excluded = outcome.summary.replications - outcome.summary.n_used;
    if excluded > 0 {
        artifacts.warnings.push(format!("{excluded} replication(s) excluded for R-hat >= 1.05"));
    }
    artifacts.add("identifiability.csv", outcome.records_csv());
    artifacts.add_json("identifiability.json", &outcome.summary)?;
    artifacts.add("hdi_contour.csv", outcome.contour_csv()?);
    artifacts.add("pair_draws.csv", outcome.draws_csv());
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bayes_actor::actor::CostSpec;

    fn record(index: usize, truth: [f64; 4], estimate: [f64; 4], converged: bool) -> ReplicationRecord {
        ReplicationRecord {
            index,
            truth: ActorParams::new(truth[0], truth[1], truth[2], truth[3], CostSpec::Quadratic).unwrap(),
            estimate: estimate.to_vec(),
            max_rhat: if converged { 1.0 } else { 1.2 },
            divergences: 0,
            converged,
        }
    }

    #[test]
    fn aggregate_skips_fixed_and_unconverged() {
        let outcome = RecoveryOutcome {
            family: CostFamily::Quadratic,
            fixed: vec![ParamName::Sigma],
            records: vec![
                record(0, [1.0, 0.1, 0.2, 0.1], [1.5, 0.1, 0.2, 0.2], true),
                record(1, [2.0, 0.1, 0.2, 0.1], [1.5, 0.3, 0.2, 0.1], true),
                record(2, [2.0, 0.1, 0.2, 0.1], [9.0, 9.0, 0.2, 9.0], false),
            ],
        };
        let agg = outcome.aggregate();
        assert_eq!(
            agg.iter().map(|a| a.parameter).collect::<Vec<_>>(),
            vec![ParamName::Mu0, ParamName::Sigma0, ParamName::SigmaR]
        );
        assert!((agg[0].mse - 0.25).abs() < 1e-12);
        assert!((agg[1].mse - 0.02).abs() < 1e-12);
        assert!((agg[2].mse - 0.005).abs() < 1e-12);
        assert!(agg.iter().all(|a| a.n_used == 2 && a.n_excluded == 1));
    }

    #[test]
    fn records_csv_recomputes_the_aggregate() {
        let outcome = RecoveryOutcome {
            family: CostFamily::Quadratic,
            fixed: vec![],
            records: vec![record(0, [1.0, 0.1, 0.2, 0.1], [1.25, 0.15, 0.3, 0.05], true)],
        };
        let text = String::from_utf8(outcome.records_csv()).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let (t, e): (f64, f64) = (row[4].parse().unwrap(), row[5].parse().unwrap());
        assert_eq!((e - t).powi(2), outcome.aggregate()[0].mse);
    }
}
