//! `infer`: posterior draws, predictive band and cost surface for one dataset.

use bayes_actor::actor::{ActorParams, Dataset};
use bayes_actor::format::fmt_f64;
use bayes_actor::inference::{
    posterior_predictive, sample_posterior, write_band_csv, PosteriorSamples, PosteriorSummary,
};
use bayes_actor::rng::{derive_seed, rng_for};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::output::Artifacts;
use crate::spec::ExperimentSpec;
use crate::{load_dataset, load_model};

/// Side of the square cost-surface grid.
pub const COST_GRID: usize = 200;

/// `s,r,cost` rows of the cost of `params` on an `n x n` grid spanning the
/// observed stimuli and responses.
pub fn cost_grid_csv(params: &ActorParams, data: &Dataset, n: usize) -> Vec<u8> {
    let range = |it: &mut dyn Iterator<Item = f64>| {
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (s_lo, s_hi) = range(&mut data.stimuli());
    let (r_lo, r_hi) = range(&mut data.responses());
    let axis = |lo: f64, hi: f64, k: usize| if n == 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
    let mut out = String::from("s,r,cost\n");
    for i in 0..n {
        let s = axis(s_lo, s_hi, i);
        for j in 0..n {
            let r = axis(r_lo, r_hi, j);
            out.push_str(&format!("{},{},{}\n", fmt_f64(s), fmt_f64(r), fmt_f64(params.cost.cost(r, s))));
        }
    }
    out.into_bytes()
}

#[derive(Serialize)]
struct InferenceRecord<'a> {
    #[serde(flatten)]
    summary: &'a PosteriorSummary,
    data_sha256: &'a str,
    network_sha256: Option<&'a str>,
    n_trials: usize,
}

/// Posterior samples for `data` under the configured priors, model and sampler,
/// with the sampler seed derived from `spec.seed`.
pub fn infer_dataset(
    spec: &ExperimentSpec,
    data: &Dataset,
    model: &dyn bayes_actor::inference::ActionModel,
) -> Result<PosteriorSamples> {
    let priors = spec.inference_priors()?;
    let cfg = bayes_actor::inference::SamplerConfig { seed: derive_seed(spec.seed, 1), ..spec.sampler.clone() };
    Ok(sample_posterior(data, &priors, model, &cfg, spec.strategy)?)
}

/// `infer`: `posterior.csv`, `posterior.json`, `predictive.csv`, `cost_grid.csv`.
pub fn run(spec: &ExperimentSpec) -> Result<Artifacts> {
    spec.validate()?;
    let mut artifacts = Artifacts::new("infer", spec);
    let data_path = spec.data.as_ref().ok_or_else(|| CliError::Input("infer needs --data <csv>".into()))?;
    let (data, data_sha) = load_dataset(data_path, &mut artifacts)?;
    let loaded = load_model(spec, &mut artifacts)?;
    let model = loaded.as_model();
    let samples = infer_dataset(spec, &data, model)?;
    let predictive = posterior_predictive(&samples, &data.unique_stimuli(), model, &mut rng_for(spec.seed, 2))?;

    let summary = samples.summary()?;
    let mut posterior_csv = Vec::new();
    samples.write_csv(&mut posterior_csv)?;
    let mut band_csv = Vec::new();
    write_band_csv(&predictive.band(), &mut band_csv)?;
    let grid = cost_grid_csv(&samples.mean_params()?, &data, COST_GRID);

    artifacts.note("action_model", model.describe());
    artifacts.add("posterior.csv", posterior_csv);
    artifacts.add_json(
        "posterior.json",
        &InferenceRecord {
            summary: &summary,
            data_sha256: &data_sha,
            network_sha256: loaded.sha256(),
            n_trials: data.len(),
        },
    )?;
    artifacts.add("predictive.csv", band_csv);
    artifacts.add("cost_grid.csv", grid);
    artifacts.warnings.extend(summary.warnings.iter().cloned());
    Ok(artifacts)
}
