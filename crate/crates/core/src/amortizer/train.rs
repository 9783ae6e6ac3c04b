use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::network::AmortizerNetwork;
use crate::actor::{posterior_unchecked, sample_stimulus_and_measurement, ActorParams, CostFamily, PriorRegime};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::mc::{standard_normal_draws, NoiseScheme, StateSample};
use crate::oracle::EvaluationSet;
use crate::rng::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Monte Carlo draws per batch element, used for both states and responses.
    pub mc_samples: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub prior_regime: PriorRegime,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub noise: NoiseScheme,
    /// Stop once the median relative error stays below this ...
    pub early_stop_median: f64,
    /// ... for this many consecutive checkpoints. Zero disables early stopping.
    pub early_stop_patience: usize,
    /// Decay of an exponential moving average of the weights; checkpoints
    /// evaluate and return the average. Zero trains plain weights.
    pub weight_average_decay: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-4,
            batch_size: 256,
            mc_samples: 128,
            total_steps: 500_000,
            eval_every: 1000,
            seed: 0,
            prior_regime: PriorRegime::Training,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            noise: NoiseScheme::Iid,
            early_stop_median: 0.005,
            early_stop_patience: 3,
            weight_average_decay: 0.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.mc_samples == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, mc_samples and eval_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.weight_average_decay) {
            return Err(Error::Config(format!(
                "weight_average_decay must lie in [0, 1), got {}",
                self.weight_average_decay
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::Config("RMSProp decay must lie in [0, 1) and epsilon be > 0".into()));
        }
        Ok(())
    }
}

/// RMSProp without momentum.
#[derive(Clone, Debug)]
pub struct RmsProp {
    decay: f64,
    epsilon: f64,
    mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(n_params: usize, decay: f64, epsilon: f64) -> Self {
        RmsProp { decay, epsilon, mean_square: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp, learning_rate: f64) {
        for ((w, &g), v) in params.params_mut().zip(grads.params()).zip(self.mean_square.iter_mut()) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *w -= learning_rate * g / (v.sqrt() + self.epsilon);
        }
    }
}

/// One minibatch of decision problems with frozen Monte Carlo noise.
pub struct TrainingBatch {
    pub(crate) params: Vec<ActorParams>,
    /// Raw parameters, `len x n_theta`.
    pub(crate) theta: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) states: Vec<StateSample>,
    /// Response noise, `len x mc_samples`.
    pub(crate) response_noise: Vec<f64>,
    pub(crate) mc_samples: usize,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Draws batch `step`: every element gets its own parameters, stimulus,
/// measurement and noise from a generator derived from `(seed, step, index)`.
pub fn sample_batch(family: CostFamily, cfg: &TrainingConfig, step: u64) -> TrainingBatch {
    let step_seed = derive_seed(cfg.seed, step);
    let n = cfg.mc_samples;
    let mut batch = TrainingBatch {
        params: Vec::with_capacity(cfg.batch_size),
        theta: Vec::with_capacity(cfg.batch_size * family.n_params()),
        m: Vec::with_capacity(cfg.batch_size),
        states: Vec::with_capacity(cfg.batch_size),
        response_noise: Vec::with_capacity(cfg.batch_size * n),
        mc_samples: n,
    };
    for b in 0..cfg.batch_size {
        let mut rng = rng_for(step_seed, b as u64);
        let p = cfg.prior_regime.sample(family, &mut rng);
        let (_, m) = sample_stimulus_and_measurement(&p, &mut rng);
        let belief = posterior_unchecked(p.mu0, p.sigma0, p.sigma, m);
        let (ln_mu, sd) = (belief.mu_post.ln(), belief.sigma_post);
        let states: Vec<f64> =
            standard_normal_draws(n, cfg.noise, &mut rng).iter().map(|e| (ln_mu + sd * e).exp()).collect();
        batch.states.push(StateSample::new(&states, &p.cost));
        batch.response_noise.extend(standard_normal_draws(n, cfg.noise, &mut rng));
        batch.theta.extend(p.to_vec());
        batch.m.push(m);
        batch.params.push(p);
    }
    batch
}

/// Mean Monte Carlo expected loss over the batch and its gradient with
/// respect to the network weights.
pub fn objective(net: &AmortizerNetwork, batch: &TrainingBatch) -> Result<(f64, Mlp)> {
    let (heads, tape) = net.forward_tape(&batch.theta, &batch.m);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut da = Vec::with_capacity(batch.len());
    for (b, h) in heads.iter().enumerate() {
        let p = &batch.params[b];
        let noise = &batch.response_noise[b * batch.mc_samples..(b + 1) * batch.mc_samples];
        let (l, g, _) = batch.states[b].expected_loss(&p.cost, h.a, p.sigma_r, noise);
        if !(l.is_finite() && g.is_finite()) {
            return Err(Error::NonFiniteLoss { index: b, params: *p, m: batch.m[b] });
        }
        loss += l;
        da.push(g * scale);
    }
    let mut grads = net.mlp.zeros_like();
    net.mlp.backward(&tape, &AmortizerNetwork::head_cotangent(&heads, &da), Some(&mut grads));
    Ok((loss * scale, grads))
}

/// One RMSProp update on `batch`; returns the batch loss before the update.
pub fn training_step(
    net: &mut AmortizerNetwork,
    opt: &mut RmsProp,
    batch: &TrainingBatch,
    learning_rate: f64,
) -> Result<f64> {
    let (loss, grads) = objective(net, batch)?;
    opt.step(&mut net.mlp, &grads, learning_rate);
    Ok(loss)
}

/// `|f(theta, m) - a*| / a*` for every entry.
pub fn relative_errors(net: &AmortizerNetwork, set: &EvaluationSet) -> Result<Vec<f64>> {
    let mut theta = Vec::with_capacity(set.len() * net.n_theta());
    let mut ms = Vec::with_capacity(set.len());
    for e in &set.entries {
        if e.params.family() != net.family {
            return Err(Error::FamilyMismatch { expected: net.family, found: e.params.family() });
        }
        theta.extend(e.params.to_vec());
        ms.push(e.m);
    }
    let actions = net.predict_rows(&theta, &ms, false);
    Ok(actions.iter().zip(&set.entries).map(|(a, e)| (a - e.a_star).abs() / e.a_star).collect())
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Median and 90th percentile of the relative action error.
pub fn evaluate(net: &AmortizerNetwork, set: &EvaluationSet) -> Result<(f64, f64)> {
    let errors = relative_errors(net, set)?;
    Ok((quantile(&errors, 0.5), quantile(&errors, 0.9)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub step: usize,
    /// Mean batch loss since the previous checkpoint.
    pub loss: f64,
    pub median_rel_err: f64,
    pub p90_rel_err: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub family: CostFamily,
    pub config: TrainingConfig,
    pub rows: Vec<CheckpointRow>,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub warning: Option<String>,
}

impl TrainingReport {
    pub fn final_row(&self) -> Option<&CheckpointRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,loss,median_rel_err,p90_rel_err,seconds")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.step,
                fmt_f64(r.loss),
                fmt_f64(r.median_rel_err),
                fmt_f64(r.p90_rel_err),
                fmt_f64(r.seconds)
            )?;
        }
        Ok(())
    }
}

/// Seed of the initial weights for a training seed.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, u64::MAX)
}

/// Trains a fresh network for `family`, checkpointing against `eval` every
/// `cfg.eval_every` steps and at the last step.
pub fn train(
    cfg: &TrainingConfig,
    family: CostFamily,
    eval: &EvaluationSet,
) -> Result<(AmortizerNetwork, TrainingReport)> {
    train_with_progress(cfg, family, eval, |_| {})
}

pub fn train_with_progress<F: FnMut(&CheckpointRow)>(
    cfg: &TrainingConfig,
    family: CostFamily,
    eval: &EvaluationSet,
    mut progress: F,
) -> Result<(AmortizerNetwork, TrainingReport)> {
    cfg.validate()?;
    if let Some(found) =
        eval.provenance.as_ref().map(|p| p.family).or_else(|| eval.entries.first().map(|e| e.params.family()))
    {
        if found != family {
            return Err(Error::FamilyMismatch { expected: family, found });
        }
    }
    let mut net = AmortizerNetwork::new(family, init_seed(cfg.seed));
    let mut opt = RmsProp::new(net.n_weights(), cfg.rmsprop_decay, cfg.rmsprop_epsilon);
    let mut report = TrainingReport {
        family,
        config: cfg.clone(),
        rows: Vec::new(),
        steps_run: 0,
        stopped_early: false,
        warning: None,
    };
    let start = Instant::now();
    let decay = cfg.weight_average_decay;
    let mut average = (decay > 0.0).then(|| net.clone());
    let (mut loss_sum, mut loss_count, mut streak) = (0.0, 0usize, 0usize);
    for step in 0..cfg.total_steps {
        let batch = sample_batch(family, cfg, step as u64);
        loss_sum += training_step(&mut net, &mut opt, &batch, cfg.learning_rate)?;
        loss_count += 1;
        if let Some(avg) = average.as_mut() {
            for (a, w) in avg.mlp.params_mut().zip(net.mlp.params()) {
                *a = decay * *a + (1.0 - decay) * w;
            }
        }
        report.steps_run = step + 1;
        let done = step + 1 == cfg.total_steps;
        if (step + 1) % cfg.eval_every == 0 || done {
            let current = average.as_ref().unwrap_or(&net);
            let (median, p90) = if eval.is_empty() { (f64::NAN, f64::NAN) } else { evaluate(current, eval)? };
            let row = CheckpointRow {
                step: step + 1,
                loss: loss_sum / loss_count as f64,
                median_rel_err: median,
                p90_rel_err: p90,
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&row);
            report.rows.push(row);
            loss_sum = 0.0;
            loss_count = 0;
            streak = if median < cfg.early_stop_median { streak + 1 } else { 0 };
            if cfg.early_stop_patience > 0 && streak >= cfg.early_stop_patience && !done {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some(avg) = average {
        net = avg;
    }
    if let Some(row) = report.rows.last() {
        net.fidelity = row.median_rel_err.is_finite().then_some(row.median_rel_err);
        if row.median_rel_err > 0.02 {
            report.warning = Some(format!(
                "final median relative error {:.4} exceeds 0.02 after {} steps",
                row.median_rel_err, report.steps_run
            ));
        }
    }
    Ok((net, report))
}
