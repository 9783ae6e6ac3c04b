use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::actor::{CostFamily, ParamName};
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Prior of one parameter, or a fixed value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    HalfNormal { scale: f64 },
    Uniform { lo: f64, hi: f64 },
    Fixed { value: f64 },
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A free parameter evaluated at an unconstrained coordinate `q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constrained {
    pub value: f64,
    /// `d value / d q`.
    pub dvalue: f64,
    /// Prior log density plus log Jacobian of the transform.
    pub log_density: f64,
    /// Derivative of `log_density` with respect to `q`.
    pub dlog_density: f64,
}

impl Prior {
    pub fn validate(&self, name: ParamName) -> Result<()> {
        let ok = match *self {
            Prior::HalfNormal { scale } => scale > 0.0 && scale.is_finite(),
            Prior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi && (!name.is_scale() || lo >= 0.0),
            Prior::Fixed { value } => value.is_finite() && value > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior {self:?} for {name}")))
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Prior::Fixed { .. })
    }

    /// Log prior density at a constrained value (`-inf` outside the support).
    pub fn log_prior(&self, x: f64) -> f64 {
        match *self {
            Prior::HalfNormal { scale } => {
                if x > 0.0 {
                    std::f64::consts::LN_2 - scale.ln() - LN_SQRT_2PI - 0.5 * (x / scale).powi(2)
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Uniform { lo, hi } => {
                if x > lo && x < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Fixed { value } => {
                if x == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Unconstrained coordinate of `x`: `ln x` for half-normal scales,
    /// `logit((x - lo) / (hi - lo))` for intervals.
    pub fn unconstrain(&self, x: f64) -> f64 {
        match *self {
            Prior::HalfNormal { .. } => x.ln(),
            Prior::Uniform { lo, hi } => {
                let u = (x - lo) / (hi - lo);
                (u / (1.0 - u)).ln()
            }
            Prior::Fixed { .. } => f64::NAN,
        }
    }

    pub fn constrain(&self, q: f64) -> Constrained {
        match *self {
            Prior::HalfNormal { scale } => {
                let x = q.exp();
                let s2 = scale * scale;
                Constrained {
                    value: x,
                    dvalue: x,
                    log_density: std::f64::consts::LN_2 - scale.ln() - LN_SQRT_2PI - 0.5 * x * x / s2 + q,
                    dlog_density: 1.0 - x * x / s2,
                }
            }
            Prior::Uniform { lo, hi } => {
                let w = hi - lo;
                let s = sigmoid(q);
                // ln s and ln(1 - s) = ln s - q, stable in both tails
                let log_s = if q >= 0.0 { -(-q).exp().ln_1p() } else { q - q.exp().ln_1p() };
                let log_1ms = log_s - q;
                Constrained {
                    value: lo + w * s,
                    dvalue: w * s * (1.0 - s),
                    log_density: log_s + log_1ms,
                    dlog_density: 1.0 - 2.0 * s,
                }
            }
            Prior::Fixed { value } => Constrained { value, dvalue: 0.0, log_density: 0.0, dlog_density: 0.0 },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::HalfNormal { scale } => loop {
                let z: f64 = rng.sample(StandardNormal);
                let x = (scale * z).abs();
                if x > 0.0 {
                    break x;
                }
            },
            Prior::Uniform { lo, hi } => loop {
                let x = Uniform::new(lo, hi).expect("valid interval").sample(rng);
                if x > lo {
                    break x;
                }
            },
            Prior::Fixed { value } => value,
        }
    }
}

/// Priors (or fixed values) for every parameter of a cost family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferencePriors {
    pub family: CostFamily,
    /// One entry per parameter, in canonical family order.
    pub entries: Vec<(ParamName, Prior)>,
}

impl InferencePriors {
    /// Half-normal(0.25) scales, `mu0 ~ U(0.1, 5)`, `beta ~ U(0.5, 1)`,
    /// `alpha ~ U(0.1, 0.9)`.
    pub fn defaults(family: CostFamily) -> Self {
        let entries = family
            .param_names()
            .iter()
            .map(|&p| {
                let prior = match p {
                    ParamName::Mu0 => Prior::Uniform { lo: 0.1, hi: 5.0 },
                    ParamName::Sigma0 | ParamName::Sigma | ParamName::SigmaR => Prior::HalfNormal { scale: 0.25 },
                    ParamName::Beta => Prior::Uniform { lo: 0.5, hi: 1.0 },
                    ParamName::Alpha => Prior::Uniform { lo: 0.1, hi: 0.9 },
                };
                (p, prior)
            })
            .collect();
        InferencePriors { family, entries }
    }

    pub fn validate(&self) -> Result<()> {
        let names: Vec<ParamName> = self.entries.iter().map(|e| e.0).collect();
        if names != self.family.param_names() {
            return Err(Error::Config(format!(
                "priors must list {:?} in order, got {names:?}",
                self.family.param_names()
            )));
        }
        self.entries.iter().try_for_each(|(n, p)| p.validate(*n))
    }

    pub fn get(&self, name: ParamName) -> Option<&Prior> {
        self.entries.iter().find(|e| e.0 == name).map(|e| &e.1)
    }

    pub fn set(&mut self, name: ParamName, prior: Prior) -> Result<()> {
        prior.validate(name)?;
        match self.entries.iter_mut().find(|e| e.0 == name) {
            Some(e) => {
                e.1 = prior;
                Ok(())
            }
            None => Err(Error::Config(format!("{} has no parameter {name}", self.family))),
        }
    }

    pub fn fix(&mut self, name: ParamName, value: f64) -> Result<()> {
        self.set(name, Prior::Fixed { value })
    }

    pub fn with_fixed(mut self, name: ParamName, value: f64) -> Result<Self> {
        self.fix(name, value)?;
        Ok(self)
    }

    /// Names of parameters that are sampled.
    pub fn free(&self) -> Vec<ParamName> {
        self.entries.iter().filter(|e| !e.1.is_fixed()).map(|e| e.0).collect()
    }

    pub fn fixed(&self) -> Vec<(ParamName, f64)> {
        self.entries
            .iter()
            .filter_map(|(n, p)| match p {
                Prior::Fixed { value } => Some((*n, *value)),
                _ => None,
            })
            .collect()
    }
}
