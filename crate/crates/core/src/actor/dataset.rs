use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;

/// One stimulus-response observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub stimulus: f64,
    pub response: f64,
}

impl Trial {
    pub fn new(stimulus: f64, response: f64) -> Result<Self> {
        crate::error::ensure_positive("stimulus", stimulus)?;
        crate::error::ensure_positive("response", response)?;
        Ok(Trial { stimulus, response })
    }
}

/// Ordered trials. CSV layout: header `stimulus,response`, one trial per row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trials: Vec<Trial>,
}

const HEADER: [&str; 2] = ["stimulus", "response"];

impl Dataset {
    pub fn new(trials: Vec<Trial>) -> Self {
        Dataset { trials }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn stimuli(&self) -> impl Iterator<Item = f64> + '_ {
        self.trials.iter().map(|t| t.stimulus)
    }

    pub fn responses(&self) -> impl Iterator<Item = f64> + '_ {
        self.trials.iter().map(|t| t.response)
    }

    /// Distinct stimulus values in ascending order.
    pub fn unique_stimuli(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.stimuli().collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", HEADER.join(","))?;
        for t in &self.trials {
            writeln!(out, "{},{}", fmt_f64(t.stimulus), fmt_f64(t.response))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses the CSV layout; malformed rows and non-positive values are
    /// reported with their 1-based line number.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader =
            csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || headers.iter().zip(HEADER).any(|(a, b)| a != b) {
            return Err(Error::Malformed {
                line: 1,
                message: format!(
                    "expected header `stimulus,response`, found `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut trials = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != 2 {
                return Err(Error::Malformed { line, message: format!("expected 2 fields, found {}", record.len()) });
            }
            let parse = |field: &str, what: &str| -> Result<f64> {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Malformed { line, message: format!("{what} `{field}` is not a number") })?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Malformed { line, message: format!("{what} must be positive, found {v}") });
                }
                Ok(v)
            };
            trials.push(Trial { stimulus: parse(&record[0], "stimulus")?, response: parse(&record[1], "response")? });
        }
        Ok(Dataset { trials })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
