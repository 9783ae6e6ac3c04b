use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{ActorParams, CostFamily, CostSpec, ParamName};
use crate::error::{Error, Result};

/// Parameter distributions used to generate actors.
///
/// * `Training`: wide boxes the amortizer is trained on.
/// * `Inference`: the researcher's default priors (half-normal scales).
/// * `Evaluation`: ranges typical of behavioural experiments, used to draw
///   ground truth for recovery studies.
///
/// Cost parameters share the same range in every regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorRegime {
    Training,
    Inference,
    Evaluation,
}

pub(crate) const HALF_NORMAL_SCALE: f64 = 0.25;

impl PriorRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorRegime::Training => "training",
            PriorRegime::Inference => "inference",
            PriorRegime::Evaluation => "evaluation",
        }
    }

    /// Support box of a uniformly distributed parameter, `None` for the
    /// half-normal scales of the inference regime.
    pub fn uniform_bounds(self, name: ParamName) -> Option<(f64, f64)> {
        match (self, name) {
            (_, ParamName::Beta) => Some((0.5, 1.0)),
            (_, ParamName::Alpha) => Some((0.1, 0.9)),
            (PriorRegime::Training, ParamName::Mu0) => Some((0.1, 7.0)),
            (PriorRegime::Training, _) => Some((0.01, 0.5)),
            (PriorRegime::Inference, ParamName::Mu0) => Some((0.1, 5.0)),
            (PriorRegime::Inference, _) => None,
            (PriorRegime::Evaluation, ParamName::Mu0) => Some((2.0, 5.0)),
            (PriorRegime::Evaluation, _) => Some((0.1, 0.25)),
        }
    }

    pub fn sample_value<R: Rng + ?Sized>(self, name: ParamName, rng: &mut R) -> f64 {
        match self.uniform_bounds(name) {
            Some((lo, hi)) => Uniform::new(lo, hi).expect("valid bounds").sample(rng),
            None => {
                let z: f64 = rng.sample(StandardNormal);
                HALF_NORMAL_SCALE * z.abs()
            }
        }
    }

    /// Draws a full parameter set of the given family.
    pub fn sample<R: Rng + ?Sized>(self, family: CostFamily, rng: &mut R) -> ActorParams {
        let values: Vec<f64> = family
            .param_names()
            .iter()
            .map(|&name| {
                let mut v = self.sample_value(name, rng);
                // half-normal draws of exactly zero are measure-zero but not
                // representable as valid parameters
                while v <= 0.0 {
                    v = self.sample_value(name, rng);
                }
                v
            })
            .collect();
        let cost = CostSpec::from_family(family, values.get(4).copied()).expect("in-range cost parameter");
        ActorParams { mu0: values[0], sigma0: values[1], sigma: values[2], sigma_r: values[3], cost }
    }
}

impl fmt::Display for PriorRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PriorRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(PriorRegime::Training),
            "inference" => Ok(PriorRegime::Inference),
            "evaluation" => Ok(PriorRegime::Evaluation),
            other => Err(Error::Config(format!("unknown prior regime `{other}`"))),
        }
    }
}
