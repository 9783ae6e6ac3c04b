//! Generative log density of stimulus-response data given actor parameters,
//! with the optimal action supplied by an amortizer or a closed form.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actor::{closed_form_action_grad, CostFamily, Dataset, ParamName};
use crate::amortizer::AmortizerNetwork;
use crate::error::{Error, Result};
use crate::inference::nuts::LogDensity;
use crate::inference::priors::InferencePriors;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A differentiable map from `(theta, m)` to the optimal action.
pub trait ActionModel: Sync {
    fn family(&self) -> CostFamily;

    /// Actions for parameter rows (`ms.len() x n_params`, canonical order).
    fn actions(&self, theta_rows: &[f64], ms: &[f64]) -> Vec<f64>;

    /// Actions for one shared parameter vector, with the row-major
    /// `ms.len() x n_params` Jacobian and `d a / d m`.
    fn actions_and_jacobian(&self, theta: &[f64], ms: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>);

    /// Median relative action error recorded when the model was built, if any.
    fn recorded_error(&self) -> Option<f64> {
        None
    }

    fn describe(&self) -> String;
}

impl ActionModel for AmortizerNetwork {
    fn family(&self) -> CostFamily {
        AmortizerNetwork::family(self)
    }

    fn actions(&self, theta_rows: &[f64], ms: &[f64]) -> Vec<f64> {
        self.predict_rows(theta_rows, ms, false)
    }

    fn actions_and_jacobian(&self, theta: &[f64], ms: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        AmortizerNetwork::actions_and_jacobian(self, theta, ms)
    }

    fn recorded_error(&self) -> Option<f64> {
        self.fidelity
    }

    fn describe(&self) -> String {
        format!("network:{}", AmortizerNetwork::family(self))
    }
}

/// The exact closed-form optimal action, for families that have one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalyticalAction {
    family: CostFamily,
}

impl AnalyticalAction {
    pub fn new(family: CostFamily) -> Result<Self> {
        if !family.has_closed_form() {
            return Err(Error::Config(format!("{family} has no closed-form optimal action")));
        }
        Ok(AnalyticalAction { family })
    }
}

impl ActionModel for AnalyticalAction {
    fn family(&self) -> CostFamily {
        self.family
    }

    fn actions(&self, theta_rows: &[f64], ms: &[f64]) -> Vec<f64> {
        let p = self.family.n_params();
        let mut grad = vec![0.0; p + 1];
        ms.iter()
            .enumerate()
            .map(|(r, &m)| closed_form_action_grad(self.family, &theta_rows[r * p..(r + 1) * p], m, &mut grad))
            .collect()
    }

    fn actions_and_jacobian(&self, theta: &[f64], ms: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.family.n_params();
        let mut grad = vec![0.0; p + 1];
        let (mut a, mut jac, mut dm) =
            (Vec::with_capacity(ms.len()), Vec::with_capacity(ms.len() * p), Vec::with_capacity(ms.len()));
        for &m in ms {
            a.push(closed_form_action_grad(self.family, theta, m, &mut grad));
            jac.extend_from_slice(&grad[..p]);
            dm.push(grad[p]);
        }
        (a, jac, dm)
    }

    fn describe(&self) -> String {
        format!("analytical:{}", self.family)
    }
}

/// Treatment of the per-trial latent measurement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentStrategy {
    /// Sample every `m_i` jointly with the parameters (exact), through
    /// `m_i = s_i exp(sigma z_i)` with standard-normal `z_i`.
    Joint,
    /// Sample every `ln m_i` jointly with the parameters (exact). Mixes
    /// better than `Joint` when `sigma_r` is small relative to `sigma`.
    JointCentered,
    /// Sample every `m_i` jointly with the parameters (exact), through
    /// `ln m_i = mu_i + tau z_i` where `mu_i` and `tau` are the mean and sd of
    /// the conditional of `ln m_i` given `(s_i, r_i)` under a log-linear
    /// approximation of the action. Avoids the funnels of both other
    /// parameterizations.
    #[default]
    JointConditional,
    /// Replace `m_i` by its conditional mode `s_i exp(-sigma^2)` (approximate).
    Mode,
}

impl LatentStrategy {
    /// Whether the measurements are sampled coordinates.
    pub fn is_joint(self) -> bool {
        self != LatentStrategy::Mode
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LatentStrategy::Joint => "joint",
            LatentStrategy::JointCentered => "joint_centered",
            LatentStrategy::JointConditional => "joint_conditional",
            LatentStrategy::Mode => "mode",
        }
    }
}

impl std::str::FromStr for LatentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(LatentStrategy::Joint),
            "joint_centered" => Ok(LatentStrategy::JointCentered),
            "joint_conditional" => Ok(LatentStrategy::JointConditional),
            "mode" => Ok(LatentStrategy::Mode),
            _ => Err(Error::Config(format!(
                "unknown latent strategy `{s}` (expected joint, joint_centered, joint_conditional or mode)"
            ))),
        }
    }
}

/// Log joint density of the data and parameters over the sampler's
/// unconstrained coordinates: the free parameters in canonical order,
/// followed (for [`LatentStrategy::Joint`]) by one standard-normal
/// coordinate `z_i` per trial with `m_i = s_i exp(sigma z_i)`.
pub struct ActorPosterior<'a, A: ActionModel + ?Sized> {
    model: &'a A,
    priors: &'a InferencePriors,
    stimuli: Vec<f64>,
    responses: Vec<f64>,
    strategy: LatentStrategy,
    /// Canonical index of each free parameter.
    free: Vec<usize>,
}

/// Constrained parameters and the pieces needed to pull a gradient back.
struct Unpacked {
    theta: Vec<f64>,
    dvalue: Vec<f64>,
    dlog_density: Vec<f64>,
    log_density: f64,
}

impl<'a, A: ActionModel + ?Sized> ActorPosterior<'a, A> {
    pub fn new(data: &Dataset, priors: &'a InferencePriors, model: &'a A, strategy: LatentStrategy) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        priors.validate()?;
        if model.family() != priors.family {
            return Err(Error::FamilyMismatch { expected: priors.family, found: model.family() });
        }
        let free = priors.entries.iter().enumerate().filter(|(_, e)| !e.1.is_fixed()).map(|(i, _)| i).collect();
        Ok(ActorPosterior {
            model,
            priors,
            stimuli: data.stimuli().collect(),
            responses: data.responses().collect(),
            strategy,
            free,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.stimuli.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn strategy(&self) -> LatentStrategy {
        self.strategy
    }

    pub fn free_names(&self) -> Vec<ParamName> {
        self.free.iter().map(|&i| self.priors.entries[i].0).collect()
    }

    pub(crate) fn free_indices(&self) -> &[usize] {
        &self.free
    }

    fn family_has_effort(&self) -> bool {
        self.priors.family == CostFamily::QuadraticWithEffort
    }

    fn unpack(&self, q: &[f64]) -> Unpacked {
        let p = self.priors.entries.len();
        let mut u =
            Unpacked { theta: vec![0.0; p], dvalue: vec![0.0; p], dlog_density: vec![0.0; p], log_density: 0.0 };
        let mut k = 0;
        for (j, (_, prior)) in self.priors.entries.iter().enumerate() {
            let c = if prior.is_fixed() {
                prior.constrain(0.0)
            } else {
                k += 1;
                prior.constrain(q[k - 1])
            };
            u.theta[j] = c.value;
            u.dvalue[j] = c.dvalue;
            u.dlog_density[j] = c.dlog_density;
            u.log_density += c.log_density;
        }
        u
    }

    /// Constrained parameters (canonical order, fixed values included) at `q`.
    pub fn constrain(&self, q: &[f64]) -> Vec<f64> {
        self.unpack(q).theta
    }

    /// Latent measurements implied by `q` (conditional modes for [`LatentStrategy::Mode`]).
    pub fn measurements(&self, q: &[f64]) -> Vec<f64> {
        let sigma = self.unpack(q).theta[2];
        match self.strategy {
            LatentStrategy::Joint => {
                let z = &q[self.free.len()..];
                self.stimuli.iter().zip(z).map(|(s, z)| s * (sigma * z).exp()).collect()
            }
            LatentStrategy::JointCentered => q[self.free.len()..].iter().map(|x| x.exp()).collect(),
            LatentStrategy::JointConditional => {
                let cond = Conditional::new(&self.unpack(q).theta, self.family_has_effort());
                let z = &q[self.free.len()..];
                (0..z.len()).map(|i| cond.ln_m(self.stimuli[i].ln(), self.responses[i].ln(), z[i]).exp()).collect()
            }
            LatentStrategy::Mode => self.stimuli.iter().map(|s| s * (-sigma * sigma).exp()).collect(),
        }
    }

    /// Data terms at constrained `theta` and measurements `ms`, accumulating
    /// `d/d theta` into `dtheta` and `d/d m_i` into `dm`. The measurement
    /// density is included when `with_measurement` is set.
    fn data_terms(&self, theta: &[f64], ms: &[f64], with_measurement: bool, dtheta: &mut [f64], dm: &mut [f64]) -> f64 {
        let p = theta.len();
        let (sigma, sigma_r) = (theta[2], theta[3]);
        let (a, jac, da_dm) = self.model.actions_and_jacobian(theta, ms);
        let var_r = sigma_r * sigma_r;
        let mut lp = 0.0;
        for i in 0..ms.len() {
            if !(a[i] > 0.0 && a[i].is_finite()) {
                return f64::NEG_INFINITY;
            }
            let ln_r = self.responses[i].ln();
            let d = ln_r - a[i].ln();
            lp += -ln_r - sigma_r.ln() - LN_SQRT_2PI - d * d / (2.0 * var_r);
            let g_a = d / (var_r * a[i]);
            for j in 0..p {
                dtheta[j] += g_a * jac[i * p + j];
            }
            dtheta[3] += -1.0 / sigma_r + d * d / (var_r * sigma_r);
            dm[i] += g_a * da_dm[i];

            if with_measurement {
                let ln_m = ms[i].ln();
                let e = ln_m - self.stimuli[i].ln();
                let var = sigma * sigma;
                lp += -ln_m - sigma.ln() - LN_SQRT_2PI - e * e / (2.0 * var);
                dm[i] += -1.0 / ms[i] - e / (var * ms[i]);
                dtheta[2] += -1.0 / sigma + e * e / (var * sigma);
            }
        }
        lp
    }

    /// Pulls constrained-space gradients back to the free coordinates.
    fn pull_back(&self, u: &Unpacked, dtheta: &[f64], grad: &mut [f64]) {
        for (k, &j) in self.free.iter().enumerate() {
            grad[k] = dtheta[j] * u.dvalue[j] + u.dlog_density[j];
        }
    }
}

impl<A: ActionModel + ?Sized> LogDensity for ActorPosterior<'_, A> {
    fn dim(&self) -> usize {
        match self.strategy {
            LatentStrategy::Joint | LatentStrategy::JointCentered | LatentStrategy::JointConditional => {
                self.free.len() + self.stimuli.len()
            }
            LatentStrategy::Mode => self.free.len(),
        }
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let u = self.unpack(q);
        if !u.log_density.is_finite() {
            return f64::NEG_INFINITY;
        }
        let n = self.stimuli.len();
        let sigma = u.theta[2];
        let ms = self.measurements(q);
        let mut dtheta = vec![0.0; u.theta.len()];
        let mut dm = vec![0.0; n];
        let mut lp = u.log_density + self.data_terms(&u.theta, &ms, false, &mut dtheta, &mut dm);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let nf = self.free.len();
        match self.strategy {
            LatentStrategy::Joint => {
                let z = &q[nf..];
                for i in 0..n {
                    lp += -0.5 * z[i] * z[i] - LN_SQRT_2PI;
                    grad[nf + i] = dm[i] * ms[i] * sigma - z[i];
                    dtheta[2] += dm[i] * ms[i] * z[i];
                }
            }
            LatentStrategy::JointCentered => {
                for i in 0..n {
                    let e = q[nf + i] - self.stimuli[i].ln();
                    let var = sigma * sigma;
                    lp += -LN_SQRT_2PI - sigma.ln() - e * e / (2.0 * var);
                    grad[nf + i] = dm[i] * ms[i] - e / var;
                    dtheta[2] += -1.0 / sigma + e * e / (var * sigma);
                }
            }
            LatentStrategy::JointConditional => {
                let cond = Conditional::new(&u.theta, self.family_has_effort());
                let var = sigma * sigma;
                let (mut sum_ls, mut sum_lr, mut sum_g, mut sum_gz) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    let z = q[nf + i];
                    let (ls, lr) = (self.stimuli[i].ln(), self.responses[i].ln());
                    let e = ms[i].ln() - ls;
                    lp += -LN_SQRT_2PI - sigma.ln() - e * e / (2.0 * var);
                    dtheta[2] += -1.0 / sigma + e * e / (var * sigma);
                    let g = dm[i] * ms[i] - e / var;
                    grad[nf + i] = g * cond.tau.v;
                    sum_ls += g * ls;
                    sum_lr += g * lr;
                    sum_g += g;
                    sum_gz += g * z;
                }
                lp += n as f64 * cond.tau.v.ln();
                for (j, d) in dtheta.iter_mut().enumerate().take(N_DUAL) {
                    *d += cond.a.d[j] * sum_ls + cond.b.d[j] * sum_lr - cond.c.d[j] * sum_g
                        + cond.tau.d[j] * (sum_gz + n as f64 / cond.tau.v);
                }
            }
            LatentStrategy::Mode => {
                for i in 0..n {
                    dtheta[2] += dm[i] * (-2.0 * sigma * ms[i]);
                }
            }
        }
        self.pull_back(&u, &dtheta, &mut grad[..nf]);
        lp
    }

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut q: Vec<f64> = self
            .free
            .iter()
            .map(|&j| {
                let prior = &self.priors.entries[j].1;
                prior.unconstrain(prior.sample(rng)) + rng.random_range(-0.5..0.5)
            })
            .collect();
        let sigma = self.constrain(&q)[2];
        for &s in &self.stimuli {
            let z: f64 = rng.sample(StandardNormal);
            match self.strategy {
                LatentStrategy::Joint | LatentStrategy::JointConditional => q.push(z),
                LatentStrategy::JointCentered => q.push(s.ln() + sigma * z),
                LatentStrategy::Mode => {}
            }
        }
        q
    }
}

const N_DUAL: usize = 5;

/// A value with its derivatives with respect to the canonical parameters.
#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: [f64; N_DUAL],
}

impl Dual {
    fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; N_DUAL] }
    }

    fn variable(v: f64, j: usize) -> Self {
        let mut d = [0.0; N_DUAL];
        d[j] = 1.0;
        Dual { v, d }
    }

    fn map(self, v: f64, dv: f64) -> Self {
        Dual { v, d: self.d.map(|x| x * dv) }
    }

    fn ln(self) -> Self {
        self.map(self.v.ln(), 1.0 / self.v)
    }

    fn powf(self, e: f64) -> Self {
        self.map(self.v.powf(e), e * self.v.powf(e - 1.0))
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: std::array::from_fn(|j| self.d[j] + o.d[j]) }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: std::array::from_fn(|j| self.d[j] - o.d[j]) }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: std::array::from_fn(|j| self.d[j] * o.v + self.v * o.d[j]) }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual { v: self.v * inv, d: std::array::from_fn(|j| (self.d[j] - self.v * inv * o.d[j]) * inv) }
    }
}

/// Conditional of `ln m` given `(s, r)` when `ln a` is the quadratic-cost
/// action (times `beta` for the effort family):
/// `ln a = (1 - w) ln mu0 + w ln m + c0`, `w = sigma0^2 / (sigma0^2 + sigma^2)`.
/// Its mean is `a ln s + b ln r - c` and its sd `tau`.
struct Conditional {
    a: Dual,
    b: Dual,
    c: Dual,
    tau: Dual,
}

impl Conditional {
    fn new(theta: &[f64], effort: bool) -> Self {
        let x = |j: usize| Dual::variable(theta[j], j);
        let one = Dual::constant(1.0);
        let (v0, v, vr) = (x(1) * x(1), x(2) * x(2), x(3) * x(3));
        let w = v0 / (v0 + v);
        let mut c0 = Dual::constant(0.5) * v0 * v / (v0 + v) - Dual::constant(1.5) * vr;
        if effort {
            c0 = c0 + x(4).ln();
        }
        let offset = (one - w) * x(0).ln() + c0;
        let precision = one / v + w * w / vr;
        let a = one / (v * precision);
        let b = w / (vr * precision);
        Conditional { a, c: b * offset, b, tau: precision.powf(-0.5) }
    }

    fn ln_m(&self, ln_s: f64, ln_r: f64, z: f64) -> f64 {
        self.a.v * ln_s + self.b.v * ln_r - self.c.v + self.tau.v * z
    }
}

/// Log joint density with explicit latent measurements:
/// `sum_i [ln p(m_i | s_i, sigma) + ln p(r_i | a(theta, m_i), sigma_r)] + ln p(theta)`
/// plus the log Jacobian of the unconstrained transforms. `q` holds the free
/// parameters' unconstrained coordinates in canonical order. Returns the
/// value and its gradient with respect to `q` followed by `m_draws`.
pub fn log_joint<A: ActionModel + ?Sized>(
    q: &[f64],
    data: &Dataset,
    priors: &InferencePriors,
    model: &A,
    m_draws: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let post = ActorPosterior::new(data, priors, model, LatentStrategy::Joint)?;
    if q.len() != post.n_free() || m_draws.len() != data.len() {
        return Err(Error::Config(format!(
            "log_joint expects {} parameters and {} measurements, got {} and {}",
            post.n_free(),
            data.len(),
            q.len(),
            m_draws.len()
        )));
    }
    let nf = post.n_free();
    let mut grad = vec![0.0; nf + m_draws.len()];
    let u = post.unpack(q);
    if !u.log_density.is_finite() || m_draws.iter().any(|&m| !(m > 0.0)) {
        return Ok((f64::NEG_INFINITY, grad));
    }
    let mut dtheta = vec![0.0; u.theta.len()];
    let mut dm = vec![0.0; m_draws.len()];
    let lp = u.log_density + post.data_terms(&u.theta, m_draws, true, &mut dtheta, &mut dm);
    post.pull_back(&u, &dtheta, &mut grad[..nf]);
    grad[nf..].copy_from_slice(&dm);
    Ok((lp, grad))
}
