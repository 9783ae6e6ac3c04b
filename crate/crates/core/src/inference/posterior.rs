//! Posterior draws, their summaries and posterior predictive simulation.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actor::{ActorParams, CostFamily, Dataset, ParamName};
use crate::amortizer::quantile;
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::inference::diagnostics::{diagnose, ParamDiagnostics};
use crate::inference::model::{ActionModel, ActorPosterior, LatentStrategy};
use crate::inference::nuts::{run_chains, LogDensity, SamplerConfig};
use crate::inference::priors::InferencePriors;

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const DIVERGENCE_THRESHOLD: f64 = 0.01;
/// Recorded median action error above which an amortizer is flagged.
pub const FIDELITY_THRESHOLD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub divergences: usize,
    pub mean_accept: f64,
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub max_depth_hits: usize,
}

/// Constrained posterior draws for the free parameters.
#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub family: CostFamily,
    pub names: Vec<ParamName>,
    pub fixed: Vec<(ParamName, f64)>,
    pub n_chains: usize,
    pub n_samples: usize,
    /// `n_chains x n_samples x names.len()`, row-major.
    pub draws: Vec<f64>,
    /// Latent measurements, `n_chains x n_samples x n_trials`; empty unless
    /// they were sampled.
    pub measurements: Vec<f64>,
    pub n_trials: usize,
    pub diagnostics: Vec<ParamDiagnostics>,
    pub chains: Vec<ChainStats>,
    pub strategy: LatentStrategy,
    pub config: SamplerConfig,
    pub priors: InferencePriors,
    pub action_model: String,
    pub warnings: Vec<String>,
}

/// Everything in the JSON sidecar of a posterior CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub family: CostFamily,
    pub strategy: LatentStrategy,
    pub action_model: String,
    pub parameters: Vec<ParamSummary>,
    pub fixed: Vec<(ParamName, f64)>,
    pub chains: Vec<ChainStats>,
    pub sampler: SamplerConfig,
    pub priors: InferencePriors,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: ParamName,
    pub mean: f64,
    pub sd: f64,
    pub q03: f64,
    pub q97: f64,
    pub mcse_mean: f64,
    #[serde(flatten)]
    pub diagnostics: ParamDiagnostics,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_samples
    }

    fn index(&self, name: ParamName) -> Result<usize> {
        self.names
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::Config(format!("{name} is not a sampled parameter")))
    }

    /// Draws of one parameter grouped by chain.
    pub fn chain_draws(&self, name: ParamName) -> Result<Vec<Vec<f64>>> {
        let k = self.index(name)?;
        let p = self.names.len();
        Ok((0..self.n_chains)
            .map(|c| (0..self.n_samples).map(|t| self.draws[(c * self.n_samples + t) * p + k]).collect())
            .collect())
    }

    /// Pooled draws of one parameter.
    pub fn param_draws(&self, name: ParamName) -> Result<Vec<f64>> {
        let k = self.index(name)?;
        Ok(self.draws.iter().skip(k).step_by(self.names.len()).copied().collect())
    }

    /// Pooled draws of trial `i`'s latent measurement.
    pub fn measurement_draws(&self, trial: usize) -> Option<Vec<f64>> {
        if self.measurements.is_empty() || trial >= self.n_trials {
            return None;
        }
        Some(self.measurements.iter().skip(trial).step_by(self.n_trials).copied().collect())
    }

    pub fn mean(&self, name: ParamName) -> Result<f64> {
        let d = self.param_draws(name)?;
        Ok(d.iter().sum::<f64>() / d.len() as f64)
    }

    pub fn sd(&self, name: ParamName) -> Result<f64> {
        let d = self.param_draws(name)?;
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        Ok((d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() as f64 - 1.0)).sqrt())
    }

    pub fn quantile(&self, name: ParamName, q: f64) -> Result<f64> {
        Ok(quantile(&self.param_draws(name)?, q))
    }

    /// Equal-tailed 94% credible interval.
    pub fn interval94(&self, name: ParamName) -> Result<(f64, f64)> {
        let d = self.param_draws(name)?;
        Ok((quantile(&d, 0.03), quantile(&d, 0.97)))
    }

    /// Monte Carlo standard error of the posterior mean.
    pub fn mcse_mean(&self, name: ParamName) -> Result<f64> {
        let k = self.index(name)?;
        Ok(self.sd(name)? / self.diagnostics[k].ess_mean.sqrt())
    }

    pub fn corr(&self, a: ParamName, b: ParamName) -> Result<f64> {
        let (x, y) = (self.param_draws(a)?, self.param_draws(b)?);
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (xi, yi) in x.iter().zip(&y) {
            sxy += (xi - mx) * (yi - my);
            sxx += (xi - mx).powi(2);
            syy += (yi - my).powi(2);
        }
        Ok(sxy / (sxx * syy).sqrt())
    }

    /// Value of a parameter, sampled or fixed, in draw `d`.
    fn value(&self, name: ParamName, d: usize) -> f64 {
        match self.names.iter().position(|&n| n == name) {
            Some(k) => self.draws[d * self.names.len() + k],
            None => self.fixed.iter().find(|f| f.0 == name).map(|f| f.1).unwrap_or(f64::NAN),
        }
    }

    /// Full parameter vector (canonical order) of draw `d`.
    pub fn theta(&self, d: usize) -> Vec<f64> {
        self.family.param_names().iter().map(|&n| self.value(n, d)).collect()
    }

    /// Posterior mean of every parameter, fixed values included.
    pub fn mean_params(&self) -> Result<ActorParams> {
        let values: Vec<f64> = self
            .family
            .param_names()
            .iter()
            .map(|&n| if self.names.contains(&n) { self.mean(n) } else { Ok(self.value(n, 0)) })
            .collect::<Result<_>>()?;
        ActorParams::from_slice(self.family, &values)
    }

    pub fn max_rhat(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.rhat).fold(1.0, f64::max)
    }

    pub fn divergences(&self) -> usize {
        self.chains.iter().map(|c| c.divergences).sum()
    }

    pub fn converged(&self) -> bool {
        self.max_rhat() <= RHAT_THRESHOLD
    }

    pub fn summary(&self) -> Result<PosteriorSummary> {
        let parameters = self
            .names
            .iter()
            .zip(&self.diagnostics)
            .map(|(&name, &diagnostics)| {
                Ok(ParamSummary {
                    name,
                    mean: self.mean(name)?,
                    sd: self.sd(name)?,
                    q03: self.quantile(name, 0.03)?,
                    q97: self.quantile(name, 0.97)?,
                    mcse_mean: self.mcse_mean(name)?,
                    diagnostics,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PosteriorSummary {
            family: self.family,
            strategy: self.strategy,
            action_model: self.action_model.clone(),
            parameters,
            fixed: self.fixed.clone(),
            chains: self.chains.clone(),
            sampler: self.config.clone(),
            priors: self.priors.clone(),
            warnings: self.warnings.clone(),
        })
    }

    /// CSV with header `chain,draw,<names>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().map(|n| n.to_string()));
        w.write_record(&header)?;
        let p = self.names.len();
        for c in 0..self.n_chains {
            for t in 0..self.n_samples {
                let row = (c * self.n_samples + t) * p;
                let mut rec = vec![c.to_string(), t.to_string()];
                rec.extend(self.draws[row..row + p].iter().map(|&x| fmt_f64(x)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws from `p(theta | data)` with NUTS, one chain per configured chain.
pub fn sample_posterior<A: ActionModel + ?Sized>(
    data: &Dataset,
    priors: &InferencePriors,
    model: &A,
    cfg: &SamplerConfig,
    strategy: LatentStrategy,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let target = ActorPosterior::new(data, priors, model, strategy)?;
    let mut warnings = Vec::new();
    if let Some(err) = model.recorded_error() {
        if err > FIDELITY_THRESHOLD {
            warnings.push(format!("action model recorded median relative error {err:.4} exceeds {FIDELITY_THRESHOLD}"));
        }
    }
    let outputs = run_chains(&target, cfg)?;

    let (nf, n_trials) = (target.n_free(), target.n_trials());
    let dim = target.dim();
    let mut draws = Vec::with_capacity(cfg.n_chains * cfg.n_samples * nf);
    let mut measurements = Vec::new();
    for out in &outputs {
        for q in out.draws.chunks(dim) {
            let theta = target.constrain(q);
            draws.extend(target.free_indices().iter().map(|&j| theta[j]));
            if strategy.is_joint() {
                measurements.extend(target.measurements(q));
            }
        }
    }
    let names = target.free_names();
    let mut samples = PosteriorSamples {
        family: priors.family,
        names,
        fixed: priors.fixed(),
        n_chains: cfg.n_chains,
        n_samples: cfg.n_samples,
        draws,
        measurements,
        n_trials,
        diagnostics: Vec::new(),
        chains: outputs
            .iter()
            .map(|o| ChainStats {
                divergences: o.divergences,
                mean_accept: o.mean_accept,
                step_size: o.step_size,
                n_leapfrog: o.n_leapfrog,
                max_depth_hits: o.max_depth_hits,
            })
            .collect(),
        strategy,
        config: cfg.clone(),
        priors: priors.clone(),
        action_model: model.describe(),
        warnings,
    };
    if cfg.n_chains >= 2 && cfg.n_samples >= 4 {
        samples.diagnostics =
            samples.names.iter().map(|&n| diagnose(&samples.chain_draws(n)?)).collect::<Result<_>>()?;
        for (n, d) in samples.names.iter().zip(&samples.diagnostics) {
            if d.rhat > RHAT_THRESHOLD {
                samples.warnings.push(format!("R-hat of {n} is {:.4} (> {RHAT_THRESHOLD})", d.rhat));
            }
        }
    } else {
        samples.warnings.push("too few chains or draws for convergence diagnostics".into());
    }
    let divergent = samples.divergences() as f64 / samples.n_draws() as f64;
    if divergent > DIVERGENCE_THRESHOLD {
        samples.warnings.push(format!("{:.2}% of transitions diverged", 100.0 * divergent));
    }
    Ok(samples)
}

/// Posterior predictive responses, one per posterior draw and stimulus.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDraws {
    pub stimuli: Vec<f64>,
    /// `draws[k]` holds the responses simulated at `stimuli[k]`.
    pub draws: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub stimulus: f64,
    pub mean: f64,
    pub lo94: f64,
    pub hi94: f64,
}

impl PredictiveDraws {
    /// Mean and equal-tailed 94% interval at each stimulus.
    pub fn band(&self) -> Vec<BandRow> {
        self.stimuli
            .iter()
            .zip(&self.draws)
            .map(|(&stimulus, d)| BandRow {
                stimulus,
                mean: d.iter().sum::<f64>() / d.len() as f64,
                lo94: quantile(d, 0.03),
                hi94: quantile(d, 0.97),
            })
            .collect()
    }
}

/// CSV with header `stimulus,mean,lo94,hi94`.
pub fn write_band_csv<W: Write>(band: &[BandRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stimulus", "mean", "lo94", "hi94"])?;
    for b in band {
        w.write_record([fmt_f64(b.stimulus), fmt_f64(b.mean), fmt_f64(b.lo94), fmt_f64(b.hi94)])?;
    }
    w.flush()?;
    Ok(())
}

/// For every posterior draw and stimulus: `m ~ LogNormal(s, sigma)`,
/// `a = f(theta, m)`, `r ~ LogNormal(a, sigma_r)`.
pub fn posterior_predictive<A: ActionModel + ?Sized, R: Rng + ?Sized>(
    samples: &PosteriorSamples,
    stimuli: &[f64],
    model: &A,
    rng: &mut R,
) -> Result<PredictiveDraws> {
    if samples.n_draws() == 0 {
        return Err(Error::InsufficientDraws { chains: samples.n_chains, draws: samples.n_samples });
    }
    if model.family() != samples.family {
        return Err(Error::FamilyMismatch { expected: samples.family, found: model.family() });
    }
    for &s in stimuli {
        crate::error::ensure_positive("stimulus", s)?;
    }
    let n = samples.n_draws();
    let thetas: Vec<Vec<f64>> = (0..n).map(|d| samples.theta(d)).collect();
    let rows: Vec<f64> = thetas.iter().flatten().copied().collect();
    let mut draws = Vec::with_capacity(stimuli.len());
    for &s in stimuli {
        let ms: Vec<f64> = thetas.iter().map(|t| crate::actor::sample_measurement(s, t[2], rng)).collect();
        let actions = model.actions(&rows, &ms);
        let responses = actions
            .iter()
            .zip(&thetas)
            .map(|(&a, t)| {
                let z: f64 = rng.sample(StandardNormal);
                (a.ln() + t[3] * z).exp()
            })
            .collect();
        draws.push(responses);
    }
    Ok(PredictiveDraws { stimuli: stimuli.to_vec(), draws })
}
