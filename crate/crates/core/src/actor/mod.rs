//! The forward Bayesian actor.
//!
//! Log-normal distributions throughout this crate use the (median, log-scale)
//! convention: `LogNormal(a, sigma)` means `ln x ~ Normal(ln a, sigma)`. The
//! location argument is the *median* of the distribution, not the mean of
//! `ln x`. Perception is `m ~ LogNormal(s, sigma)` with prior
//! `s ~ LogNormal(mu0, sigma0)`; responses are `r ~ LogNormal(a, sigma_r)`.

mod cost;
mod dataset;
mod regime;

pub use cost::{CostFamily, CostSpec, ParamName};
pub use dataset::{Dataset, Trial};
pub use regime::PriorRegime;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Lower bound applied to scale parameters inside likelihood evaluations.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Subject-side parameters: prior median and width, sensory and motor noise,
/// and the cost function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorParams {
    pub mu0: f64,
    pub sigma0: f64,
    pub sigma: f64,
    pub sigma_r: f64,
    pub cost: CostSpec,
}

impl ActorParams {
    pub fn new(mu0: f64, sigma0: f64, sigma: f64, sigma_r: f64, cost: CostSpec) -> Result<Self> {
        let params = ActorParams { mu0, sigma0, sigma, sigma_r, cost };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("mu0", self.mu0)?;
        ensure_positive("sigma0", self.sigma0)?;
        ensure_positive("sigma", self.sigma)?;
        ensure_positive("sigma_r", self.sigma_r)?;
        self.cost.validate()
    }

    pub fn family(&self) -> CostFamily {
        self.cost.family()
    }

    /// Values in the family's canonical order (see [`CostFamily::param_names`]).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.mu0, self.sigma0, self.sigma, self.sigma_r];
        v.extend(self.cost.param());
        v
    }

    pub fn from_slice(family: CostFamily, values: &[f64]) -> Result<Self> {
        if values.len() != family.n_params() {
            return Err(Error::Config(format!(
                "{family} takes {} parameters, got {}",
                family.n_params(),
                values.len()
            )));
        }
        let cost = CostSpec::from_family(family, values.get(4).copied())?;
        Self::new(values[0], values[1], values[2], values[3], cost)
    }

    pub fn get(&self, name: ParamName) -> Option<f64> {
        match name {
            ParamName::Mu0 => Some(self.mu0),
            ParamName::Sigma0 => Some(self.sigma0),
            ParamName::Sigma => Some(self.sigma),
            ParamName::SigmaR => Some(self.sigma_r),
            ParamName::Beta | ParamName::Alpha => {
                (self.family().cost_param() == Some(name)).then(|| self.cost.param()).flatten()
            }
        }
    }
}

/// The actor's log-normal belief about the stimulus after seeing `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorBelief {
    pub mu_post: f64,
    pub sigma_post: f64,
}

impl PosteriorBelief {
    pub fn variance(&self) -> f64 {
        self.sigma_post * self.sigma_post
    }
}

/// Conjugate fusion of the log-normal prior and likelihood in log space.
pub fn posterior(params: &ActorParams, m: f64) -> Result<PosteriorBelief> {
    ensure_positive("measurement m", m)?;
    Ok(posterior_unchecked(params.mu0, params.sigma0, params.sigma, m))
}

pub(crate) fn posterior_unchecked(mu0: f64, sigma0: f64, sigma: f64, m: f64) -> PosteriorBelief {
    let prec0 = 1.0 / (sigma0 * sigma0);
    let prec = 1.0 / (sigma * sigma);
    let var_post = 1.0 / (prec0 + prec);
    let log_mu = var_post * (mu0.ln() * prec0 + m.ln() * prec);
    PosteriorBelief { mu_post: log_mu.exp(), sigma_post: var_post.sqrt() }
}

/// Closed-form minimiser of the posterior expected quadratic cost,
/// `mu_post * exp((sigma_post^2 - 3 sigma_r^2) / 2)`.
pub fn optimal_action_quadratic(params: &ActorParams, m: f64) -> Result<f64> {
    if params.family() != CostFamily::Quadratic {
        return Err(Error::FamilyMismatch { expected: CostFamily::Quadratic, found: params.family() });
    }
    let belief = posterior(params, m)?;
    Ok(shrunk_posterior_median(&belief, params.sigma_r))
}

/// Closed form for quadratic cost plus quadratic effort: the quadratic
/// solution scaled by `beta`.
pub fn optimal_action_quadratic_effort(params: &ActorParams, m: f64) -> Result<f64> {
    let CostSpec::QuadraticWithEffort { beta } = params.cost else {
        return Err(Error::FamilyMismatch { expected: CostFamily::QuadraticWithEffort, found: params.family() });
    };
    let belief = posterior(params, m)?;
    Ok(beta * shrunk_posterior_median(&belief, params.sigma_r))
}

/// Closed-form optimal action for any family that has one.
pub fn optimal_action_closed_form(params: &ActorParams, m: f64) -> Option<Result<f64>> {
    match params.family() {
        CostFamily::Quadratic => Some(optimal_action_quadratic(params, m)),
        CostFamily::QuadraticWithEffort => Some(optimal_action_quadratic_effort(params, m)),
        CostFamily::AsymmetricQuadratic => None,
    }
}

fn shrunk_posterior_median(belief: &PosteriorBelief, sigma_r: f64) -> f64 {
    belief.mu_post * (0.5 * (belief.variance() - 3.0 * sigma_r * sigma_r)).exp()
}

/// Closed-form action and its gradient with respect to
/// `(mu0, sigma0, sigma, sigma_r, [beta], m)`.
///
/// `theta` is in canonical family order. Works in log space:
/// `ln a = (v ln mu0 + u ln m + uv/2) / (u + v) - 3/2 sigma_r^2 [+ ln beta]`
/// with `u = sigma0^2`, `v = sigma^2`.
pub fn closed_form_action_grad(family: CostFamily, theta: &[f64], m: f64, grad: &mut [f64]) -> f64 {
    debug_assert!(family.has_closed_form());
    let (mu0, sigma0, sigma, sigma_r) = (theta[0], theta[1], theta[2], theta[3]);
    let u = sigma0 * sigma0;
    let v = sigma * sigma;
    let total = u + v;
    let (ln_mu0, ln_m) = (mu0.ln(), m.ln());
    let mut ln_a = (v * ln_mu0 + u * ln_m + 0.5 * u * v) / total - 1.5 * sigma_r * sigma_r;
    let beta = match family {
        CostFamily::QuadraticWithEffort => theta[4],
        _ => 1.0,
    };
    ln_a += beta.ln();
    let a = ln_a.exp();

    let t2 = total * total;
    let d_du = (v * (ln_m - ln_mu0) + 0.5 * v * v) / t2;
    let d_dv = (u * (ln_mu0 - ln_m) + 0.5 * u * u) / t2;
    grad[0] = a * (v / total) / mu0;
    grad[1] = a * d_du * 2.0 * sigma0;
    grad[2] = a * d_dv * 2.0 * sigma;
    grad[3] = a * (-3.0 * sigma_r);
    let mut next = 4;
    if family == CostFamily::QuadraticWithEffort {
        grad[4] = a / beta;
        next = 5;
    }
    grad[next] = a * (u / total) / m;
    a
}

/// Reparameterised response: `exp(ln a + noise * sigma_r)`.
pub fn sample_response(a: f64, sigma_r: f64, noise: f64) -> Result<f64> {
    ensure_positive("action a", a)?;
    Ok((a.ln() + noise * sigma_r).exp())
}

/// Reparameterised draw from the actor's belief.
pub fn sample_posterior_state(belief: &PosteriorBelief, noise: f64) -> f64 {
    (belief.mu_post.ln() + noise * belief.sigma_post).exp()
}

/// Draws `s ~ LogNormal(mu0, sigma0)` and `m ~ LogNormal(s, sigma)`.
pub fn sample_stimulus_and_measurement<R: Rng + ?Sized>(params: &ActorParams, rng: &mut R) -> (f64, f64) {
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let s = (params.mu0.ln() + params.sigma0 * z0).exp();
    let m = (s.ln() + params.sigma * z1).exp();
    (s, m)
}

/// Draws `m ~ LogNormal(s, sigma)`.
pub fn sample_measurement<R: Rng + ?Sized>(s: f64, sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (s.ln() + sigma * z).exp()
}
