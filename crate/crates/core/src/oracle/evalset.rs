use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_optimal_action, OracleConfig};
use crate::actor::{
    optimal_action_closed_form, sample_stimulus_and_measurement, ActorParams, CostFamily, CostSpec, PriorRegime,
};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::rng::rng_for;

/// One reference point: parameters, measurement and the optimal action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub params: ActorParams,
    pub m: f64,
    pub a_star: f64,
}

/// How the set was generated. Not part of the CSV layout; callers persist it
/// next to the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationProvenance {
    pub regime: PriorRegime,
    pub family: CostFamily,
    pub oracle: OracleConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSet {
    pub entries: Vec<EvalEntry>,
    pub provenance: Option<EvaluationProvenance>,
}

const HEADER: [&str; 8] = ["mu0", "sigma0", "sigma", "sigma_r", "cost_family", "cost_param", "m", "a_star"];

fn entry(index: usize, family: CostFamily, regime: PriorRegime, cfg: &OracleConfig) -> Result<EvalEntry> {
    let mut rng = rng_for(cfg.seed, index as u64);
    let params = regime.sample(family, &mut rng);
    let (_, m) = sample_stimulus_and_measurement(&params, &mut rng);
    let oracle_seed: u64 = rng.random();
    let a_star = match optimal_action_closed_form(&params, m) {
        Some(a) => a,
        None => solve_optimal_action(&params, m, &cfg.with_seed(oracle_seed)),
    }
    .map_err(|e| Error::EvaluationEntry { index, params, m, source: Box::new(e) })?;
    Ok(EvalEntry { params, m, a_star })
}

/// Draws `n` parameter sets from `regime` with their reference optimal
/// actions. Entry `i` depends only on `(cfg.seed, i)`, so the result does not
/// depend on thread scheduling.
pub fn build_evaluation_set(
    n: usize,
    family: CostFamily,
    regime: PriorRegime,
    cfg: &OracleConfig,
) -> Result<EvaluationSet> {
    cfg.validate()?;
    let entries = (0..n).into_par_iter().map(|i| entry(i, family, regime, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(EvaluationSet { entries, provenance: Some(EvaluationProvenance { regime, family, oracle: cfg.clone() }) })
}

impl EvaluationSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", HEADER.join(","))?;
        for e in &self.entries {
            let p = &e.params;
            let cost_param = p.cost.param().map(fmt_f64).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(p.mu0),
                fmt_f64(p.sigma0),
                fmt_f64(p.sigma),
                fmt_f64(p.sigma_r),
                p.family(),
                cost_param,
                fmt_f64(e.m),
                fmt_f64(e.a_star)
            )?;
        }
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() != HEADER.len() || headers.iter().zip(HEADER).any(|(a, b)| a != b) {
            return Err(Error::Malformed { line: 1, message: format!("expected header `{}`", HEADER.join(",")) });
        }
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            let malformed = |message: String| Error::Malformed { line, message };
            if record.len() != HEADER.len() {
                return Err(malformed(format!("expected {} fields, found {}", HEADER.len(), record.len())));
            }
            let num = |i: usize| -> Result<f64> {
                record[i].parse().map_err(|_| malformed(format!("{} `{}` is not a number", HEADER[i], &record[i])))
            };
            let family: CostFamily =
                record[4].parse().map_err(|_| malformed(format!("unknown cost family `{}`", &record[4])))?;
            let cost_param = if record[5].is_empty() { None } else { Some(num(5)?) };
            let cost = CostSpec::from_family(family, cost_param).map_err(|e| malformed(e.to_string()))?;
            let params =
                ActorParams::new(num(0)?, num(1)?, num(2)?, num(3)?, cost).map_err(|e| malformed(e.to_string()))?;
            let (m, a_star) = (num(6)?, num(7)?);
            if !(m > 0.0 && a_star > 0.0 && m.is_finite() && a_star.is_finite()) {
                return Err(malformed("m and a_star must be positive".into()));
            }
            entries.push(EvalEntry { params, m, a_star });
        }
        Ok(EvaluationSet { entries, provenance: None })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor::optimal_action_closed_form;

    fn small() -> OracleConfig {
        OracleConfig { n_state_samples: 1000, n_response_samples: 1000, seed: 8, ..Default::default() }
    }

    #[test]
    fn empty_request() {
        let set = build_evaluation_set(0, CostFamily::Quadratic, PriorRegime::Training, &small()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn closed_form_used_directly() {
        let set = build_evaluation_set(100, CostFamily::Quadratic, PriorRegime::Training, &small()).unwrap();
        for e in &set.entries {
            let exact = optimal_action_closed_form(&e.params, e.m).unwrap().unwrap();
            assert_eq!(e.a_star.to_bits(), exact.to_bits());
        }
    }

    #[test]
    fn asymmetric_set_is_reproducible() {
        let a = build_evaluation_set(100, CostFamily::AsymmetricQuadratic, PriorRegime::Training, &small()).unwrap();
        let b = build_evaluation_set(100, CostFamily::AsymmetricQuadratic, PriorRegime::Training, &small()).unwrap();
        assert!(a.entries.iter().all(|e| e.a_star > 0.0));
        assert_eq!(a.to_csv_bytes(), b.to_csv_bytes());
    }

    #[test]
    fn csv_round_trip() {
        let set = build_evaluation_set(20, CostFamily::QuadraticWithEffort, PriorRegime::Evaluation, &small()).unwrap();
        let back = EvaluationSet::read_csv(set.to_csv_bytes().as_slice()).unwrap();
        assert_eq!(back.entries, set.entries);
    }

    #[test]
    fn bad_family_reports_line() {
        let text = format!("{}\n1,0.1,0.1,0.1,cubic,,2,2\n", HEADER.join(","));
        assert!(matches!(EvaluationSet::read_csv(text.as_bytes()), Err(Error::Malformed { line: 2, .. })));
    }

    impl EvaluationSet {
        fn to_csv_bytes(&self) -> Vec<u8> {
            let mut buf = Vec::new();
            self.write_csv(&mut buf).unwrap();
            buf
        }
    }
}
