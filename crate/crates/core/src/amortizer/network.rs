use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Dense, Mlp, Tape};
use crate::actor::{ActorParams, CostFamily, ParamName, PriorRegime};
use crate::error::{ensure_positive, Error, Result};

pub const HIDDEN_WIDTHS: [usize; 4] = [16, 64, 16, 8];
/// Measurements below this are clamped before entering the network.
pub const M_FLOOR: f64 = 1e-6;
const N_HEAD: usize = 3;

/// One network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Param(ParamName),
    LogMeasurement,
}

impl Input {
    pub fn as_str(self) -> &'static str {
        match self {
            Input::Param(p) => p.as_str(),
            Input::LogMeasurement => "log_m",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "log_m" {
            return Ok(Input::LogMeasurement);
        }
        s.parse::<ParamName>().map(Input::Param).map_err(|_| Error::Checkpoint(format!("unknown input `{s}`")))
    }
}

/// Neural surrogate for the optimal action of one cost family:
/// `a = softplus(y1 * exp(y2 ln m) + y3)` with `(y1, y2, y3)` the output of
/// an MLP fed with the normalised parameters and `ln m`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmortizerNetwork {
    pub(crate) family: CostFamily,
    pub(crate) input_spec: Vec<Input>,
    /// Affine range `(lo, hi)` of every input, mapped to `[-1, 1]`.
    pub(crate) normalization: Vec<(f64, f64)>,
    pub(crate) mlp: Mlp,
    /// Median relative action error at the end of training, if recorded.
    pub fidelity: Option<f64>,
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

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Output head and its partial derivatives for one row.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Head {
    pub a: f64,
    pub da_dy: [f64; N_HEAD],
    /// Derivative through the head's explicit `m` only.
    pub da_dm: f64,
}

pub(crate) fn head(y: &[f64], m: f64) -> Head {
    let clamped = m.max(M_FLOOR);
    let ln_m = clamped.ln();
    let p = (y[1] * ln_m).exp();
    let z = y[0] * p + y[2];
    let s = sigmoid(z);
    let sp = softplus(z);
    Head {
        // keep strictly positive when softplus underflows; NaN passes through
        a: if sp == 0.0 { f64::MIN_POSITIVE } else { sp },
        da_dy: [s * p, s * y[0] * p * ln_m, s],
        da_dm: if m > M_FLOOR { s * y[0] * p * y[1] / m } else { 0.0 },
    }
}

/// Range of `ln m` covered by the training box: the extreme prior medians
/// widened by three marginal standard deviations of `ln m`.
fn log_m_range() -> (f64, f64) {
    let regime = PriorRegime::Training;
    let bound = |p| regime.uniform_bounds(p).expect("training box is uniform");
    let (mu_lo, mu_hi) = bound(ParamName::Mu0);
    let spread = 3.0 * (bound(ParamName::Sigma0).1.powi(2) + bound(ParamName::Sigma).1.powi(2)).sqrt();
    (mu_lo.ln() - spread, mu_hi.ln() + spread)
}

impl AmortizerNetwork {
    /// Fresh network with the standard hidden widths.
    pub fn new(family: CostFamily, seed: u64) -> Self {
        Self::with_hidden(family, &HIDDEN_WIDTHS, seed)
    }

    pub fn with_hidden(family: CostFamily, hidden: &[usize], seed: u64) -> Self {
        let mut input_spec: Vec<Input> = family.param_names().iter().map(|&p| Input::Param(p)).collect();
        input_spec.push(Input::LogMeasurement);
        let normalization = input_spec
            .iter()
            .map(|inp| match inp {
                Input::Param(p) => PriorRegime::Training.uniform_bounds(*p).expect("training box is uniform"),
                Input::LogMeasurement => log_m_range(),
            })
            .collect();
        let mut widths = vec![input_spec.len()];
        widths.extend_from_slice(hidden);
        widths.push(N_HEAD);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::new(&widths, &mut rng);
        let out = mlp.layers.last_mut().expect("output layer");
        out.weights.iter_mut().for_each(|w| *w *= 0.1);
        out.biases.copy_from_slice(&[1.0, 1.0, 0.0]);
        AmortizerNetwork { family, input_spec, normalization, mlp, fidelity: None }
    }

    pub fn family(&self) -> CostFamily {
        self.family
    }

    pub fn input_names(&self) -> Vec<&'static str> {
        self.input_spec.iter().map(|i| i.as_str()).collect()
    }

    pub fn normalization(&self) -> &[(f64, f64)] {
        &self.normalization
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let w = self.mlp.widths();
        w[1..w.len() - 1].to_vec()
    }

    pub fn n_weights(&self) -> usize {
        self.mlp.n_params()
    }

    pub(crate) fn n_theta(&self) -> usize {
        self.input_spec.len() - 1
    }

    fn scale(&self, i: usize) -> f64 {
        let (lo, hi) = self.normalization[i];
        2.0 / (hi - lo)
    }

    /// Writes the normalised input row for raw parameters `theta`
    /// (canonical family order) and measurement `m`.
    pub(crate) fn encode(&self, theta: &[f64], m: f64, out: &mut [f64]) {
        let p = self.n_theta();
        for i in 0..p {
            let (lo, _) = self.normalization[i];
            out[i] = (theta[i] - lo) * self.scale(i) - 1.0;
        }
        let (lo, _) = self.normalization[p];
        out[p] = (m.max(M_FLOOR).ln() - lo) * self.scale(p) - 1.0;
    }

    /// Input rows for `theta_rows` (`rows x n_theta`) paired with `ms`.
    pub(crate) fn encode_batch(&self, theta_rows: &[f64], ms: &[f64]) -> Vec<f64> {
        let (p, width) = (self.n_theta(), self.input_spec.len());
        let mut x = vec![0.0; ms.len() * width];
        for (r, &m) in ms.iter().enumerate() {
            self.encode(&theta_rows[r * p..(r + 1) * p], m, &mut x[r * width..(r + 1) * width]);
        }
        x
    }

    fn check(&self, theta: &ActorParams, m: f64) -> Result<()> {
        if theta.family() != self.family {
            return Err(Error::FamilyMismatch { expected: self.family, found: theta.family() });
        }
        ensure_positive("measurement m", m)?;
        Ok(())
    }

    /// Predicted optimal action.
    pub fn forward(&self, theta: &ActorParams, m: f64) -> Result<f64> {
        self.check(theta, m)?;
        Ok(self.predict_rows(&theta.to_vec(), &[m], false)[0])
    }

    /// Actions for parameter rows (`ms.len() x n_theta`, or a single row
    /// shared by every `m` when `shared` is set).
    pub(crate) fn predict_rows(&self, theta: &[f64], ms: &[f64], shared: bool) -> Vec<f64> {
        let rows = self.tile(theta, ms.len(), shared);
        let y = self.mlp.predict(&self.encode_batch(&rows, ms), ms.len());
        ms.iter().enumerate().map(|(r, &m)| head(&y[r * N_HEAD..(r + 1) * N_HEAD], m).a).collect()
    }

    fn tile(&self, theta: &[f64], n: usize, shared: bool) -> Vec<f64> {
        if shared {
            theta.iter().copied().cycle().take(n * theta.len()).collect()
        } else {
            theta.to_vec()
        }
    }

    /// Actions for a batch of rows with everything needed to pull a cotangent
    /// on the actions back to the weights or the inputs.
    pub(crate) fn forward_tape(&self, theta_rows: &[f64], ms: &[f64]) -> (Vec<Head>, Tape) {
        let (y, tape) = self.mlp.forward(&self.encode_batch(theta_rows, ms), ms.len());
        let heads = ms.iter().enumerate().map(|(r, &m)| head(&y[r * N_HEAD..(r + 1) * N_HEAD], m)).collect();
        (heads, tape)
    }

    /// Output-layer cotangent for per-row action cotangents `da`.
    pub(crate) fn head_cotangent(heads: &[Head], da: &[f64]) -> Vec<f64> {
        heads.iter().zip(da).flat_map(|(h, &d)| h.da_dy.map(|v| v * d)).collect()
    }

    /// Per-row `(d a / d theta, d a / d m)` for a shared parameter vector.
    /// The Jacobian is row-major `ms.len() x n_theta`.
    pub fn actions_and_jacobian(&self, theta: &[f64], ms: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.n_theta();
        let width = self.input_spec.len();
        let rows = self.tile(theta, ms.len(), true);
        let (heads, tape) = self.forward_tape(&rows, ms);
        let ones = vec![1.0; ms.len()];
        let dx = self.mlp.backward(&tape, &Self::head_cotangent(&heads, &ones), None);
        let mut jac = vec![0.0; ms.len() * p];
        let mut dm = vec![0.0; ms.len()];
        for (r, &m) in ms.iter().enumerate() {
            for i in 0..p {
                jac[r * p + i] = dx[r * width + i] * self.scale(i);
            }
            let trunk = if m > M_FLOOR { dx[r * width + p] * self.scale(p) / m } else { 0.0 };
            dm[r] = trunk + heads[r].da_dm;
        }
        (heads.iter().map(|h| h.a).collect(), jac, dm)
    }

    /// Reverse-mode gradient of the action with respect to the parameters
    /// (canonical order) and the measurement.
    pub fn gradients(&self, theta: &ActorParams, m: f64) -> Result<(Vec<f64>, f64)> {
        self.check(theta, m)?;
        let (_, jac, dm) = self.actions_and_jacobian(&theta.to_vec(), &[m]);
        Ok((jac, dm[0]))
    }

    /// Zeroes the first-layer weights reading input `index`.
    pub fn disconnect_input(&mut self, index: usize) {
        let first = &mut self.mlp.layers[0];
        let n_out = first.n_out;
        first.weights[index * n_out..(index + 1) * n_out].iter_mut().for_each(|w| *w = 0.0);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            cost_family: self.family,
            activation: "swish".to_string(),
            widths: self.mlp.widths(),
            input_spec: self.input_names().iter().map(|s| s.to_string()).collect(),
            normalization: self.normalization.iter().map(|&(lo, hi)| [lo, hi]).collect(),
            layers: self.mlp.layers.clone(),
            median_rel_err: self.fidelity,
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag `{}`", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        if c.activation != "swish" {
            return Err(Error::Checkpoint(format!("unsupported activation `{}`", c.activation)));
        }
        let input_spec = c.input_spec.iter().map(|s| Input::parse(s)).collect::<Result<Vec<_>>>()?;
        let mut expected: Vec<Input> = c.cost_family.param_names().iter().map(|&p| Input::Param(p)).collect();
        expected.push(Input::LogMeasurement);
        if input_spec != expected {
            return Err(Error::Checkpoint(format!("input spec {:?} does not fit {}", c.input_spec, c.cost_family)));
        }
        if c.normalization.len() != input_spec.len() || c.normalization.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::Checkpoint("normalization ranges malformed".into()));
        }
        let consistent = c.widths.len() == c.layers.len() + 1
            && c.widths.first() == Some(&input_spec.len())
            && c.widths.last() == Some(&N_HEAD)
            && c.layers.iter().enumerate().all(|(i, l)| {
                l.n_in == c.widths[i]
                    && l.n_out == c.widths[i + 1]
                    && l.weights.len() == l.n_in * l.n_out
                    && l.biases.len() == l.n_out
            });
        if !consistent {
            return Err(Error::Checkpoint("layer shapes inconsistent with widths".into()));
        }
        Ok(AmortizerNetwork {
            family: c.cost_family,
            input_spec,
            normalization: c.normalization.iter().map(|&[lo, hi]| (lo, hi)).collect(),
            mlp: Mlp { layers: c.layers },
            fidelity: c.median_rel_err,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "bayes-actor-amortizer";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint layout. Each layer holds `weights` as a row-major
/// `n_in x n_out` array and `biases` of length `n_out`; hidden layers use
/// swish, the last layer is linear and feeds the softplus power-law head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub cost_family: CostFamily,
    pub activation: String,
    pub widths: Vec<usize>,
    pub input_spec: Vec<String>,
    pub normalization: Vec<[f64; 2]>,
    pub layers: Vec<Dense>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_rel_err: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor::{sample_stimulus_and_measurement, CostSpec};
    use rand::Rng;

    fn random_net(family: CostFamily, seed: u64) -> AmortizerNetwork {
        let mut net = AmortizerNetwork::new(family, seed);
        // perturb the output layer so the head is not near its initial form
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for w in net.mlp.layers.last_mut().unwrap().weights.iter_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        net
    }

    #[test]
    fn architecture() {
        let net = AmortizerNetwork::new(CostFamily::AsymmetricQuadratic, 0);
        assert_eq!(net.hidden_widths(), vec![16, 64, 16, 8]);
        assert_eq!(net.input_names(), vec!["mu0", "sigma0", "sigma", "sigma_r", "alpha", "log_m"]);
        assert_eq!(net.mlp.n_inputs(), 6);
        let (lo, hi) = net.normalization[5];
        assert!((lo + 4.4236).abs() < 1e-3 && (hi - 4.0672).abs() < 1e-3, "{lo} {hi}");
    }

    #[test]
    fn positive_and_deterministic() {
        let net = random_net(CostFamily::QuadraticWithEffort, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let p = PriorRegime::Training.sample(CostFamily::QuadraticWithEffort, &mut rng);
            let (_, m) = sample_stimulus_and_measurement(&p, &mut rng);
            let a = net.forward(&p, m).unwrap();
            assert!(a > 0.0);
            assert_eq!(a.to_bits(), net.forward(&p, m).unwrap().to_bits());
        }
        let p = PriorRegime::Training.sample(CostFamily::QuadraticWithEffort, &mut rng);
        assert!(net.forward(&p, 1e-300).unwrap() > 0.0);
    }

    #[test]
    fn rejects_wrong_family_and_bad_m() {
        let net = AmortizerNetwork::new(CostFamily::Quadratic, 0);
        let q = ActorParams::new(2.0, 0.1, 0.1, 0.1, CostSpec::Quadratic).unwrap();
        let e = ActorParams { cost: CostSpec::QuadraticWithEffort { beta: 0.7 }, ..q };
        assert!(matches!(net.forward(&e, 1.0), Err(Error::FamilyMismatch { .. })));
        assert!(matches!(net.forward(&q, 0.0), Err(Error::Domain { .. })));
        assert!(matches!(net.gradients(&q, -1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in CostFamily::ALL {
            let net = random_net(family, 6);
            for _ in 0..100 {
                let p = PriorRegime::Training.sample(family, &mut rng);
                let (_, m) = sample_stimulus_and_measurement(&p, &mut rng);
                let (g, gm) = net.gradients(&p, m).unwrap();
                let theta = p.to_vec();
                let h = 1e-5;
                for i in 0..theta.len() {
                    let mut tp = theta.clone();
                    tp[i] += h;
                    let mut tm = theta.clone();
                    tm[i] -= h;
                    let fd = (net.predict_rows(&tp, &[m], true)[0] - net.predict_rows(&tm, &[m], true)[0]) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3), "{family} {i}: {fd} vs {}", g[i]);
                }
                let fd = (net.predict_rows(&theta, &[m + h], true)[0] - net.predict_rows(&theta, &[m - h], true)[0])
                    / (2.0 * h);
                assert!((fd - gm).abs() <= 1e-4 * gm.abs().max(1e-3), "{family} m: {fd} vs {gm}");
            }
        }
    }

    #[test]
    fn dead_input_has_zero_gradient() {
        let mut net = random_net(CostFamily::QuadraticWithEffort, 7);
        net.disconnect_input(4);
        let p = ActorParams::new(2.0, 0.2, 0.3, 0.1, CostSpec::QuadraticWithEffort { beta: 0.8 }).unwrap();
        let (g, _) = net.gradients(&p, 2.5).unwrap();
        assert_eq!(g[4], 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = random_net(CostFamily::AsymmetricQuadratic, 8);
        let back = AmortizerNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let bits = |n: &AmortizerNetwork| n.mlp.params().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
    }

    #[test]
    fn checkpoint_validation() {
        let net = AmortizerNetwork::new(CostFamily::Quadratic, 0);
        let mut c = net.to_checkpoint();
        c.version = 99;
        assert!(matches!(AmortizerNetwork::from_checkpoint(c), Err(Error::Checkpoint(_))));
        let mut c = net.to_checkpoint();
        c.layers[1].biases.pop();
        assert!(matches!(AmortizerNetwork::from_checkpoint(c), Err(Error::Checkpoint(_))));
        let mut c = net.to_checkpoint();
        c.cost_family = CostFamily::AsymmetricQuadratic;
        assert!(matches!(AmortizerNetwork::from_checkpoint(c), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn initial_map_is_near_softplus_of_m() {
        let net = AmortizerNetwork::new(CostFamily::Quadratic, 1);
        let p = ActorParams::new(2.0, 0.2, 0.2, 0.1, CostSpec::Quadratic).unwrap();
        for m in [0.5, 2.0, 5.0] {
            let a = net.forward(&p, m).unwrap();
            assert!((a / softplus(m) - 1.0).abs() < 0.5, "{m}: {a}");
        }
    }

    #[test]
    fn head_derivatives() {
        let y = [0.7, 1.3, -0.2];
        let m = 2.3;
        let h0 = head(&y, m);
        let e = 1e-7;
        for i in 0..3 {
            let mut yp = y;
            yp[i] += e;
            let mut ym = y;
            ym[i] -= e;
            let fd = (head(&yp, m).a - head(&ym, m).a) / (2.0 * e);
            assert!((fd - h0.da_dy[i]).abs() < 1e-6);
        }
        let fd = (head(&y, m + e).a - head(&y, m - e).a) / (2.0 * e);
        assert!((fd - h0.da_dm).abs() < 1e-6);
        assert_eq!(head(&y, 1e-9).da_dm, 0.0);
    }
}
