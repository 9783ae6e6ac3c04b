//! `train` and `evaluate`: amortizer networks and their action fidelity.

use bayes_actor::actor::{ActorParams, CostFamily};
use bayes_actor::amortizer::{quantile, train_with_progress, AmortizerNetwork};
use bayes_actor::inference::{ActionModel, AnalyticalAction};
use bayes_actor::oracle::{build_evaluation_set, EvaluationSet};
use bayes_actor::rng::derive_seed;
use serde::Serialize;

use crate::error::Result;
use crate::output::Artifacts;
use crate::spec::ExperimentSpec;
use crate::{load_eval_set, load_network};

/// The evaluation set named in the settings, or a fresh one of `eval_size`
/// entries from the settings' regime (also added to the artifacts).
fn evaluation_set(spec: &ExperimentSpec, artifacts: &mut Artifacts) -> Result<EvaluationSet> {
    if let Some(path) = &spec.eval_set {
        return load_eval_set(path, artifacts);
    }
    let oracle = spec.oracle.with_seed(derive_seed(spec.seed, 2));
    let set = build_evaluation_set(spec.eval_size, spec.family, spec.regime, &oracle)?;
    let mut bytes = Vec::new();
    set.write_csv(&mut bytes)?;
    artifacts.add("eval_set.csv", bytes);
    Ok(set)
}

/// `train`: `network.json`, `training.csv` and, unless supplied, `eval_set.csv`.
///
/// Wall-clock seconds in `training.csv` are written as zero unless
/// `spec.timing` is set, so that reruns are byte-identical.
pub fn run_train(spec: &ExperimentSpec) -> Result<Artifacts> {
    spec.validate()?;
    let mut artifacts = Artifacts::new("train", spec);
    let set = evaluation_set(spec, &mut artifacts)?;
    let cfg = bayes_actor::amortizer::TrainingConfig { seed: spec.seed, ..spec.training.clone() };
    let (net, mut report) = train_with_progress(&cfg, spec.family, &set, |row| {
        eprintln!(
            "step {:>7}  loss {:.5}  median {:.5}  p90 {:.5}",
            row.step, row.loss, row.median_rel_err, row.p90_rel_err
        );
    })?;
    if !spec.timing {
        report.rows.iter_mut().for_each(|r| r.seconds = 0.0);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    artifacts.add("network.json", net.to_json()?.into_bytes());
    artifacts.add("training.csv", csv);
    artifacts.warnings.extend(report.warning);
    Ok(artifacts)
}

#[derive(Clone, Debug, Serialize)]
pub struct WorstCase {
    pub index: usize,
    pub params: ActorParams,
    pub m: f64,
    pub a_star: f64,
    pub predicted: f64,
    pub rel_err: f64,
}

/// Log-log linear fits of the action against the measurement.
#[derive(Clone, Debug, Serialize)]
pub struct PowerLawFit {
    pub n_fits: usize,
    pub min_r2: f64,
    pub median_r2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FidelityReport {
    pub family: CostFamily,
    pub model: String,
    pub n_entries: usize,
    pub median_rel_err: f64,
    pub p90_rel_err: f64,
    pub max_rel_err: f64,
    pub worst: Vec<WorstCase>,
    pub power_law: Option<PowerLawFit>,
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    }
}

/// For up to 20 entries, fits `ln a = c + k ln m` over `m` within a factor
/// `e^0.5` of the entry's measurement.
fn power_law_fit<A: ActionModel + ?Sized>(model: &A, set: &EvaluationSet) -> PowerLawFit {
    let grid: Vec<f64> = (0..41).map(|j| -0.5 + j as f64 / 40.0).collect();
    let mut r2: Vec<f64> = set
        .entries
        .iter()
        .take(20)
        .map(|e| {
            let ms: Vec<f64> = grid.iter().map(|g| e.m * g.exp()).collect();
            let theta = e.params.to_vec();
            let rows: Vec<f64> = ms.iter().flat_map(|_| theta.iter().copied()).collect();
            let ln_a: Vec<f64> = model.actions(&rows, &ms).iter().map(|a| a.ln()).collect();
            let ln_m: Vec<f64> = ms.iter().map(|m| m.ln()).collect();
            r_squared(&ln_m, &ln_a)
        })
        .collect();
    r2.sort_by(f64::total_cmp);
    PowerLawFit { n_fits: r2.len(), min_r2: r2.first().copied().unwrap_or(f64::NAN), median_r2: quantile(&r2, 0.5) }
}

/// Fidelity of `model` on `set`; no threshold is enforced.
pub fn fidelity_report<A: ActionModel + ?Sized>(model: &A, set: &EvaluationSet) -> Result<FidelityReport> {
    for e in &set.entries {
        if e.params.family() != model.family() {
            return Err(
                bayes_actor::Error::FamilyMismatch { expected: model.family(), found: e.params.family() }.into()
            );
        }
    }
    let rows: Vec<f64> = set.entries.iter().flat_map(|e| e.params.to_vec()).collect();
    let ms: Vec<f64> = set.entries.iter().map(|e| e.m).collect();
    let predicted = model.actions(&rows, &ms);
    let errors: Vec<f64> = predicted.iter().zip(&set.entries).map(|(a, e)| (a - e.a_star).abs() / e.a_star).collect();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]));
    let worst = order
        .iter()
        .take(10)
        .map(|&i| {
            let e = &set.entries[i];
            WorstCase {
                index: i,
                params: e.params,
                m: e.m,
                a_star: e.a_star,
                predicted: predicted[i],
                rel_err: errors[i],
            }
        })
        .collect();
    Ok(FidelityReport {
        family: model.family(),
        model: model.describe(),
        n_entries: errors.len(),
        median_rel_err: quantile(&sorted, 0.5),
        p90_rel_err: quantile(&sorted, 0.9),
        max_rel_err: sorted.last().copied().unwrap_or(f64::NAN),
        worst,
        power_law: (model.family() == CostFamily::Quadratic && !set.is_empty()).then(|| power_law_fit(model, set)),
    })
}

/// `evaluate`: `fidelity.json` for the network, or for the closed form when
/// `spec.analytical` is set.
pub fn run_evaluate(spec: &ExperimentSpec) -> Result<Artifacts> {
    spec.validate()?;
    let mut artifacts = Artifacts::new("evaluate", spec);
    let report = if spec.analytical {
        let model = AnalyticalAction::new(spec.family)?;
        let set = evaluation_set(spec, &mut artifacts)?;
        fidelity_report(&model, &set)?
    } else {
        let path = spec.network.as_ref().ok_or(crate::error::CliError::MissingNetwork { family: spec.family })?;
        let net: AmortizerNetwork = load_network(path, &mut artifacts)?;
        let family_spec = ExperimentSpec { family: net.family(), ..spec.clone() };
        let set = evaluation_set(&family_spec, &mut artifacts)?;
        fidelity_report(&net, &set)?
    };
    artifacts.add_json("fidelity.json", &report)?;
    Ok(artifacts)
}
