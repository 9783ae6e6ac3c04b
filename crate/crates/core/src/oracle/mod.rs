//! Reference optimal actions by direct numerical minimisation of the Monte
//! Carlo posterior expected loss.
//!
//! Noise is drawn once per configuration (common random numbers), so the
//! estimated loss is a deterministic, smooth function of the action and can
//! be minimised with a bracketed scalar search: golden section on `ln a`
//! followed by secant polishing of `dL/da = 0`.

mod evalset;
mod minimize;

pub use evalset::{build_evaluation_set, EvalEntry, EvaluationProvenance, EvaluationSet};
pub use minimize::{golden_section, secant_root, Bracketed};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{posterior, sample_posterior_state, ActorParams};
use crate::error::{ensure_positive, Error, Result};
use crate::mc::{standard_normal_draws, NoiseScheme, StateSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Posterior state draws `K`.
    pub n_state_samples: usize,
    /// Response draws `N`.
    pub n_response_samples: usize,
    pub seed: u64,
    /// Width of the final golden-section bracket in `ln a`.
    pub optimizer_tolerance: f64,
    /// Action search interval, stimulus units.
    pub bracket: (f64, f64),
    pub max_iterations: usize,
    pub noise: NoiseScheme,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_state_samples: 10_000,
            n_response_samples: 10_000,
            seed: 0,
            optimizer_tolerance: 1e-9,
            bracket: (1e-3, 1e2),
            max_iterations: 200,
            noise: NoiseScheme::Stratified,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_state_samples == 0 || self.n_response_samples == 0 {
            return Err(Error::Config("oracle sample counts must be >= 1".into()));
        }
        let (lo, hi) = self.bracket;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid action bracket ({lo}, {hi})")));
        }
        if !(self.optimizer_tolerance > 0.0) {
            return Err(Error::Config("optimizer tolerance must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        OracleConfig { seed, ..self.clone() }
    }

    /// The frozen standard-normal noise `(state, response)` for this config.
    pub fn noise_draws(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let states = standard_normal_draws(self.n_state_samples, self.noise, &mut rng);
        let responses = standard_normal_draws(self.n_response_samples, self.noise, &mut rng);
        (states, responses)
    }
}

/// Loss surface over actions for one `(params, m)` with frozen noise.
pub struct LossSurface {
    params: ActorParams,
    states: StateSample,
    response_noise: Vec<f64>,
}

impl LossSurface {
    pub fn new(params: &ActorParams, m: f64, cfg: &OracleConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let belief = posterior(params, m)?;
        let (state_noise, response_noise) = cfg.noise_draws();
        let draws: Vec<f64> = state_noise.iter().map(|&e| sample_posterior_state(&belief, e)).collect();
        Ok(LossSurface { params: *params, states: StateSample::new(&draws, &params.cost), response_noise })
    }

    /// `(L(a), dL/da, d2L/da2)`.
    pub fn evaluate(&self, a: f64) -> (f64, f64, f64) {
        self.states.expected_loss(&self.params.cost, a, self.params.sigma_r, &self.response_noise)
    }
}

/// Monte Carlo posterior expected loss of intending action `a`.
pub fn expected_loss(params: &ActorParams, m: f64, a: f64, cfg: &OracleConfig) -> Result<f64> {
    ensure_positive("action a", a)?;
    Ok(LossSurface::new(params, m, cfg)?.evaluate(a).0)
}

/// The action minimising [`expected_loss`] over `cfg.bracket`.
pub fn solve_optimal_action(params: &ActorParams, m: f64, cfg: &OracleConfig) -> Result<f64> {
    let surface = LossSurface::new(params, m, cfg)?;
    let (low, high) = cfg.bracket;
    let (ln_lo, ln_hi) = (low.ln(), high.ln());
    let search = golden_section(
        |ln_a| surface.evaluate(ln_a.exp()).0,
        ln_lo,
        ln_hi,
        cfg.optimizer_tolerance,
        cfg.max_iterations,
    );
    let a_golden = search.x.exp();
    let edge = 1e-6 * (ln_hi - ln_lo);
    if !search.converged || search.x - ln_lo < edge || ln_hi - search.x < edge {
        return Err(Error::NoConvergence {
            iterations: search.iterations,
            low,
            high,
            gradient: surface.evaluate(a_golden).1.abs(),
        });
    }

    let polished = secant_root(|a| surface.evaluate(a).1, a_golden, a_golden * (1.0 + 1e-7), low, high, 1e-14, 30);
    Ok(match polished {
        Some((a, _)) if surface.evaluate(a).0 <= search.fx => a,
        _ => a_golden,
    })
}
