use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag of a parametric cost family, without its parameter values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    Quadratic,
    QuadraticWithEffort,
    AsymmetricQuadratic,
}

impl CostFamily {
    pub const ALL: [CostFamily; 3] =
        [CostFamily::Quadratic, CostFamily::QuadraticWithEffort, CostFamily::AsymmetricQuadratic];

    pub fn as_str(self) -> &'static str {
        match self {
            CostFamily::Quadratic => "quadratic",
            CostFamily::QuadraticWithEffort => "quadratic_with_effort",
            CostFamily::AsymmetricQuadratic => "asymmetric_quadratic",
        }
    }

    /// Name of the single cost parameter, if the family has one.
    pub fn cost_param(self) -> Option<ParamName> {
        match self {
            CostFamily::Quadratic => None,
            CostFamily::QuadraticWithEffort => Some(ParamName::Beta),
            CostFamily::AsymmetricQuadratic => Some(ParamName::Alpha),
        }
    }

    /// Canonical parameter order for this family: the four sensorimotor
    /// parameters followed by the cost parameter.
    pub fn param_names(self) -> &'static [ParamName] {
        use ParamName::*;
        match self {
            CostFamily::Quadratic => &[Mu0, Sigma0, Sigma, SigmaR],
            CostFamily::QuadraticWithEffort => &[Mu0, Sigma0, Sigma, SigmaR, Beta],
            CostFamily::AsymmetricQuadratic => &[Mu0, Sigma0, Sigma, SigmaR, Alpha],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    /// Whether a closed-form optimal action exists for this family.
    pub fn has_closed_form(self) -> bool {
        !matches!(self, CostFamily::AsymmetricQuadratic)
    }
}

impl fmt::Display for CostFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CostFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(CostFamily::Quadratic),
            "quadratic_with_effort" | "quadratic-with-effort" | "effort" => Ok(CostFamily::QuadraticWithEffort),
            "asymmetric_quadratic" | "asymmetric-quadratic" | "asymmetric" => Ok(CostFamily::AsymmetricQuadratic),
            other => Err(Error::Config(format!("unknown cost family `{other}`"))),
        }
    }
}

/// Names of the actor-side parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    Mu0,
    Sigma0,
    Sigma,
    SigmaR,
    Beta,
    Alpha,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Mu0 => "mu0",
            ParamName::Sigma0 => "sigma0",
            ParamName::Sigma => "sigma",
            ParamName::SigmaR => "sigma_r",
            ParamName::Beta => "beta",
            ParamName::Alpha => "alpha",
        }
    }

    /// Log-scale widths: strictly positive, floored inside likelihoods.
    pub fn is_scale(self) -> bool {
        matches!(self, ParamName::Sigma0 | ParamName::Sigma | ParamName::SigmaR)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu0" => Ok(ParamName::Mu0),
            "sigma0" => Ok(ParamName::Sigma0),
            "sigma" => Ok(ParamName::Sigma),
            "sigma_r" => Ok(ParamName::SigmaR),
            "beta" => Ok(ParamName::Beta),
            "alpha" => Ok(ParamName::Alpha),
            other => Err(Error::Config(format!("unknown parameter `{other}`"))),
        }
    }
}

/// A cost function `l(r, s)` of response `r` and true state `s`.
///
/// * `Quadratic`: `(r - s)^2`
/// * `QuadraticWithEffort`: `beta (s - r)^2 + (1 - beta) r^2`, `beta` in (0, 1]
/// * `AsymmetricQuadratic`: `2 |alpha - 1[r >= s]| (r - s)^2`, `alpha` in (0, 1)
///
/// With `alpha < 0.5` overshoots (`r > s`) cost less than undershoots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostSpec {
    Quadratic,
    QuadraticWithEffort { beta: f64 },
    AsymmetricQuadratic { alpha: f64 },
}

impl CostSpec {
    pub fn quadratic_with_effort(beta: f64) -> Result<Self> {
        let spec = CostSpec::QuadraticWithEffort { beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn asymmetric_quadratic(alpha: f64) -> Result<Self> {
        let spec = CostSpec::AsymmetricQuadratic { alpha };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from a family tag and its parameter (ignored for `Quadratic`).
    pub fn from_family(family: CostFamily, param: Option<f64>) -> Result<Self> {
        let need = || Error::Config(format!("{family} needs a cost parameter"));
        match family {
            CostFamily::Quadratic => Ok(CostSpec::Quadratic),
            CostFamily::QuadraticWithEffort => Self::quadratic_with_effort(param.ok_or_else(need)?),
            CostFamily::AsymmetricQuadratic => Self::asymmetric_quadratic(param.ok_or_else(need)?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CostSpec::Quadratic => Ok(()),
            CostSpec::QuadraticWithEffort { beta } => {
                if beta > 0.0 && beta <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::domain("beta", "in (0, 1]", beta))
                }
            }
            CostSpec::AsymmetricQuadratic { alpha } => {
                if alpha > 0.0 && alpha < 1.0 {
                    Ok(())
                } else {
                    Err(Error::domain("alpha", "in (0, 1)", alpha))
                }
            }
        }
    }

    pub fn family(&self) -> CostFamily {
        match self {
            CostSpec::Quadratic => CostFamily::Quadratic,
            CostSpec::QuadraticWithEffort { .. } => CostFamily::QuadraticWithEffort,
            CostSpec::AsymmetricQuadratic { .. } => CostFamily::AsymmetricQuadratic,
        }
    }

    pub fn param(&self) -> Option<f64> {
        match *self {
            CostSpec::Quadratic => None,
            CostSpec::QuadraticWithEffort { beta } => Some(beta),
            CostSpec::AsymmetricQuadratic { alpha } => Some(alpha),
        }
    }

    pub fn cost(&self, r: f64, s: f64) -> f64 {
        let d = r - s;
        match *self {
            CostSpec::Quadratic => d * d,
            CostSpec::QuadraticWithEffort { beta } => beta * d * d + (1.0 - beta) * r * r,
            CostSpec::AsymmetricQuadratic { alpha } => {
                let indicator = if d >= 0.0 { 1.0 } else { 0.0 };
                2.0 * (alpha - indicator).abs() * d * d
            }
        }
    }

    /// Partial derivative of the cost with respect to the response.
    pub fn d_cost_dr(&self, r: f64, s: f64) -> f64 {
        let d = r - s;
        match *self {
            CostSpec::Quadratic => 2.0 * d,
            CostSpec::QuadraticWithEffort { beta } => 2.0 * beta * d + 2.0 * (1.0 - beta) * r,
            CostSpec::AsymmetricQuadratic { alpha } => {
                let indicator = if d >= 0.0 { 1.0 } else { 0.0 };
                4.0 * (alpha - indicator).abs() * d
            }
        }
    }

    /// Weights `(w_le, w_gt, effort)` such that
    /// `l(r, s) = w (r - s)^2 + effort r^2` with `w = w_le` when `s <= r`
    /// and `w = w_gt` otherwise.
    pub(crate) fn piecewise_weights(&self) -> (f64, f64, f64) {
        match *self {
            CostSpec::Quadratic => (1.0, 1.0, 0.0),
            CostSpec::QuadraticWithEffort { beta } => (beta, beta, 1.0 - beta),
            CostSpec::AsymmetricQuadratic { alpha } => (2.0 * (1.0 - alpha), 2.0 * alpha, 0.0),
        }
    }
}

impl fmt::Display for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CostSpec::Quadratic => write!(f, "quadratic"),
            CostSpec::QuadraticWithEffort { beta } => {
                write!(f, "quadratic_with_effort(beta={beta})")
            }
            CostSpec::AsymmetricQuadratic { alpha } => {
                write!(f, "asymmetric_quadratic(alpha={alpha})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_at_target() {
        assert_eq!(CostSpec::Quadratic.cost(2.0, 2.0), 0.0);
    }

    #[test]
    fn parameter_ranges_enforced() {
        assert!(CostSpec::quadratic_with_effort(0.0).is_err());
        assert!(CostSpec::quadratic_with_effort(1.0).is_ok());
        assert!(CostSpec::quadratic_with_effort(1.01).is_err());
        assert!(CostSpec::asymmetric_quadratic(0.0).is_err());
        assert!(CostSpec::asymmetric_quadratic(1.0).is_err());
        assert!(CostSpec::asymmetric_quadratic(0.3).is_ok());
        assert!(CostSpec::asymmetric_quadratic(f64::NAN).is_err());
    }

    #[test]
    fn family_round_trips_through_strings() {
        for family in CostFamily::ALL {
            assert_eq!(family.as_str().parse::<CostFamily>().unwrap(), family);
        }
    }

    proptest! {
        #[test]
        fn effort_with_unit_beta_is_quadratic(r in 0.01f64..20.0, s in 0.01f64..20.0) {
            let effort = CostSpec::QuadraticWithEffort { beta: 1.0 };
            prop_assert_eq!(effort.cost(r, s), CostSpec::Quadratic.cost(r, s));
        }

        #[test]
        fn symmetric_asymmetry_is_quadratic(r in 0.01f64..20.0, s in 0.01f64..20.0) {
            let asym = CostSpec::AsymmetricQuadratic { alpha: 0.5 };
            prop_assert_eq!(asym.cost(r, s), CostSpec::Quadratic.cost(r, s));
        }

        #[test]
        fn quadratic_is_symmetric(s in 0.1f64..10.0, d in 0.0f64..5.0) {
            let (over, under) = (CostSpec::Quadratic.cost(s + d, s), CostSpec::Quadratic.cost(s - d, s));
            prop_assert!((over - under).abs() <= 1e-12 * over.max(1e-300));
        }

        #[test]
        fn small_alpha_penalises_overshoot(s in 0.1f64..10.0, d in 1e-3f64..5.0, alpha in 0.01f64..0.49) {
            let asym = CostSpec::AsymmetricQuadratic { alpha };
            prop_assert!(asym.cost(s + d, s) > asym.cost(s - d, s));
            let mirrored = CostSpec::AsymmetricQuadratic { alpha: 1.0 - alpha };
            prop_assert!(mirrored.cost(s + d, s) < mirrored.cost(s - d, s));
        }

        #[test]
        fn derivative_matches_central_difference(
            r in 0.1f64..10.0, s in 0.1f64..10.0, beta in 0.5f64..1.0, alpha in 0.1f64..0.9,
        ) {
            prop_assume!((r - s).abs() > 1e-3);
            for spec in [
                CostSpec::Quadratic,
                CostSpec::QuadraticWithEffort { beta },
                CostSpec::AsymmetricQuadratic { alpha },
            ] {
                let h = 1e-6;
                let fd = (spec.cost(r + h, s) - spec.cost(r - h, s)) / (2.0 * h);
                prop_assert!((fd - spec.d_cost_dr(r, s)).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }

        #[test]
        fn piecewise_weights_reproduce_cost(
            r in 0.1f64..10.0, s in 0.1f64..10.0, beta in 0.5f64..1.0, alpha in 0.1f64..0.9,
        ) {
            for spec in [
                CostSpec::Quadratic,
                CostSpec::QuadraticWithEffort { beta },
                CostSpec::AsymmetricQuadratic { alpha },
            ] {
                let (w_le, w_gt, effort) = spec.piecewise_weights();
                let w = if s <= r { w_le } else { w_gt };
                let via = w * (r - s).powi(2) + effort * r * r;
                prop_assert!((via - spec.cost(r, s)).abs() <= 1e-12 * (1.0 + via.abs()));
            }
        }
    }
}
