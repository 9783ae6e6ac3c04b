//! Experiment settings: built-in defaults, overridden by an optional TOML
//! config file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bayes_actor::actor::{ActorParams, CostFamily, ParamName, PriorRegime};
use bayes_actor::amortizer::TrainingConfig;
use bayes_actor::inference::{InferencePriors, LatentStrategy, SamplerConfig};
use bayes_actor::oracle::OracleConfig;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// How simulated responses obtain their optimal action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Closed form if the family has one, else the network if given, else the oracle.
    #[default]
    Auto,
    ClosedForm,
    Network,
    Oracle,
}

impl FromStr for Solver {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Solver::Auto),
            "closed_form" | "closed-form" => Ok(Solver::ClosedForm),
            "network" => Ok(Solver::Network),
            "oracle" => Ok(Solver::Oracle),
            other => Err(CliError::Input(format!("unknown solver `{other}`"))),
        }
    }
}

/// Every setting of every subcommand. Unused fields are ignored by a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub family: CostFamily,
    /// Prior from which ground truths are drawn.
    pub regime: PriorRegime,
    pub n_trials: usize,
    pub replications: usize,
    /// Master seed; every random stream of a command is derived from it.
    pub seed: u64,
    /// Parameters fixed at their true values in recovery and identifiability studies.
    pub fixed: Vec<String>,
    /// Parameters fixed at the given values during inference.
    pub fix: BTreeMap<String, f64>,
    /// Ground-truth values; missing entries are drawn from `regime`.
    pub truth: BTreeMap<String, f64>,
    /// Stimuli cycled through by simulated trials; empty draws them from the prior.
    pub stimuli: Vec<f64>,
    /// Parameter pair studied by `identifiability`.
    pub pair: Option<(String, String)>,
    pub solver: Solver,
    /// Use the closed-form action instead of a network checkpoint.
    pub analytical: bool,
    pub strategy: LatentStrategy,
    pub sampler: SamplerConfig,
    pub training: TrainingConfig,
    pub oracle: OracleConfig,
    /// Entries of a freshly built evaluation set.
    pub eval_size: usize,
    pub network: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub eval_set: Option<PathBuf>,
    /// Keep wall-clock seconds in training reports (breaks byte reproducibility).
    pub timing: bool,
    /// Treat warnings as errors.
    pub strict: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            family: CostFamily::Quadratic,
            regime: PriorRegime::Evaluation,
            n_trials: 60,
            replications: 100,
            seed: 0,
            fixed: Vec::new(),
            fix: BTreeMap::new(),
            truth: BTreeMap::new(),
            stimuli: Vec::new(),
            pair: None,
            solver: Solver::Auto,
            analytical: false,
            strategy: LatentStrategy::default(),
            sampler: SamplerConfig::default(),
            training: TrainingConfig {
                total_steps: 100_000,
                early_stop_patience: 0,
                weight_average_decay: 0.999,
                ..TrainingConfig::default()
            },
            oracle: OracleConfig::default(),
            eval_size: 1000,
            network: None,
            data: None,
            eval_set: None,
            timing: false,
            strict: false,
        }
    }
}

pub fn parse_param(name: &str) -> Result<ParamName> {
    Ok(name.trim().parse::<ParamName>()?)
}

fn param_map(map: &BTreeMap<String, f64>) -> Result<Vec<(ParamName, f64)>> {
    map.iter().map(|(k, &v)| Ok((parse_param(k)?, v))).collect()
}

fn check_family(family: CostFamily, name: ParamName) -> Result<ParamName> {
    if family.param_names().contains(&name) {
        Ok(name)
    } else {
        Err(CliError::Input(format!("{family} has no parameter {name}")))
    }
}

impl ExperimentSpec {
    /// Defaults overridden by the TOML file at `path`.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(CliError::Input("n_trials must be >= 1".into()));
        }
        if self.replications == 0 {
            return Err(CliError::Input("replications must be >= 1".into()));
        }
        if let Some(s) = self.stimuli.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(CliError::Input(format!("stimuli must be positive, got {s}")));
        }
        self.fixed_params()?;
        self.truth_values()?;
        self.inference_priors()?;
        self.sampler.validate()?;
        self.oracle.validate()?;
        Ok(())
    }

    pub fn fixed_params(&self) -> Result<Vec<ParamName>> {
        self.fixed.iter().map(|n| check_family(self.family, parse_param(n)?)).collect()
    }

    pub fn truth_values(&self) -> Result<Vec<(ParamName, f64)>> {
        param_map(&self.truth)?.into_iter().map(|(n, v)| Ok((check_family(self.family, n)?, v))).collect()
    }

    /// Default inference priors with the `fix` entries applied.
    pub fn inference_priors(&self) -> Result<InferencePriors> {
        let mut priors = InferencePriors::defaults(self.family);
        for (name, value) in param_map(&self.fix)? {
            priors.fix(check_family(self.family, name)?, value)?;
        }
        Ok(priors)
    }

    /// The pair studied by `identifiability`, defaulting to the family's
    /// confound of `mu0` or to `(sigma, sigma0)`.
    pub fn identifiability_pair(&self) -> Result<(ParamName, ParamName)> {
        let (a, b) = match &self.pair {
            Some((a, b)) => (parse_param(a)?, parse_param(b)?),
            None => match self.family.cost_param() {
                Some(p) => (ParamName::Mu0, p),
                None => (ParamName::Sigma, ParamName::Sigma0),
            },
        };
        if a == b {
            return Err(CliError::Input(format!("identifiability pair repeats {a}")));
        }
        Ok((check_family(self.family, a)?, check_family(self.family, b)?))
    }

    /// A ground truth: `truth` entries, remaining values drawn from `regime`.
    pub fn draw_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ActorParams> {
        let drawn = self.regime.sample(self.family, rng);
        let mut values = drawn.to_vec();
        for (name, value) in self.truth_values()? {
            let i = self.family.param_names().iter().position(|&p| p == name).expect("checked against family");
            values[i] = value;
        }
        Ok(ActorParams::from_slice(self.family, &values)?)
    }

    /// Settings recorded in provenance files: output location omitted so that
    /// runs into different directories compare equal.
    pub fn provenance_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bayes_actor::rng::rng_for;

    #[test]
    fn toml_overrides_defaults() {
        let spec: ExperimentSpec = toml::from_str(
            r#"
            family = "quadratic_with_effort"
            replications = 20
            fixed = ["beta"]
            [truth]
            mu0 = 2.95
            [sampler]
            n_samples = 200
            "#,
        )
        .unwrap();
        assert_eq!(spec.family, CostFamily::QuadraticWithEffort);
        assert_eq!(spec.replications, 20);
        assert_eq!(spec.n_trials, 60);
        assert_eq!(spec.sampler.n_samples, 200);
        assert_eq!(spec.sampler.n_warmup, SamplerConfig::default().n_warmup);
        assert_eq!(spec.fixed_params().unwrap(), vec![ParamName::Beta]);
        let truth = spec.draw_truth(&mut rng_for(0, 0)).unwrap();
        assert_eq!(truth.mu0, 2.95);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentSpec>("replicates = 3").is_err());
    }

    #[test]
    fn invalid_settings() {
        let bad = |f: fn(&mut ExperimentSpec)| {
            let mut s = ExperimentSpec::default();
            f(&mut s);
            s.validate().unwrap_err()
        };
        bad(|s| s.n_trials = 0);
        bad(|s| s.replications = 0);
        bad(|s| s.fixed = vec!["beta".into()]);
        bad(|s| s.fixed = vec!["tau".into()]);
        bad(|s| s.stimuli = vec![1.0, -2.0]);
        bad(|s| {
            s.fix.insert("sigma".into(), -1.0);
        });
        ExperimentSpec::default().validate().unwrap();
    }

    #[test]
    fn default_pairs() {
        let mut s = ExperimentSpec::default();
        assert_eq!(s.identifiability_pair().unwrap(), (ParamName::Sigma, ParamName::Sigma0));
        s.family = CostFamily::AsymmetricQuadratic;
        assert_eq!(s.identifiability_pair().unwrap(), (ParamName::Mu0, ParamName::Alpha));
        s.pair = Some(("mu0".into(), "mu0".into()));
        assert!(s.identifiability_pair().is_err());
    }
}
