//! Monte Carlo machinery shared by the oracle and the amortizer objective.
//!
//! The posterior expected loss is estimated by the double average
//! `1/(K N) sum_k sum_n l(r_n, s_k)`. All shipped cost families are
//! piecewise quadratic in `r - s`, so the inner sum over states collapses to
//! prefix sums over the sorted state draws. That gives the exact value of the
//! double average in `O((K + N) log K)` instead of `O(K N)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::actor::CostSpec;

/// How standard-normal noise is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    /// Independent draws.
    Iid,
    /// One uniformly placed draw per equiprobable stratum, mapped through the
    /// normal quantile function.
    #[default]
    Stratified,
}

pub fn standard_normal_draws<R: Rng + ?Sized>(n: usize, scheme: NoiseScheme, rng: &mut R) -> Vec<f64> {
    match scheme {
        NoiseScheme::Iid => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        NoiseScheme::Stratified => {
            let normal = Normal::standard();
            let unit = Uniform::new(0.0f64, 1.0).expect("unit interval");
            (0..n)
                .map(|k| {
                    let mut u = (k as f64 + unit.sample(rng)) / n as f64;
                    // keep away from the quantile function's poles
                    u = u.clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
                    normal.inverse_cdf(u)
                })
                .collect()
        }
    }
}

/// A set of state draws prepared for fast pairwise loss sums.
#[derive(Clone, Debug)]
pub struct StateSample {
    shift: f64,
    /// Shifted states `s_k - shift`, ascending when `ordered`.
    centred: Vec<f64>,
    prefix1: Vec<f64>,
    prefix2: Vec<f64>,
    ordered: bool,
}

impl StateSample {
    /// Prepares `states` for `cost`. Sorting is skipped when the cost is
    /// symmetric, since then the split point is never needed.
    pub fn new(states: &[f64], cost: &CostSpec) -> Self {
        let (w_le, w_gt, _) = cost.piecewise_weights();
        let ordered = w_le != w_gt;
        let k = states.len().max(1) as f64;
        let shift = states.iter().sum::<f64>() / k;
        let mut centred: Vec<f64> = states.iter().map(|s| s - shift).collect();
        if ordered {
            centred.sort_by(f64::total_cmp);
        }
        let mut prefix1 = Vec::with_capacity(centred.len() + 1);
        let mut prefix2 = Vec::with_capacity(centred.len() + 1);
        let (mut a, mut b) = (0.0, 0.0);
        prefix1.push(0.0);
        prefix2.push(0.0);
        for &x in &centred {
            a += x;
            b += x * x;
            prefix1.push(a);
            prefix2.push(b);
        }
        StateSample { shift, centred, prefix1, prefix2, ordered }
    }

    pub fn len(&self) -> usize {
        self.centred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centred.is_empty()
    }

    /// `(sum_k l(r, s_k), sum_k dl/dr(r, s_k), sum_k d2l/dr2(r, s_k))`.
    pub fn loss_sum(&self, cost: &CostSpec, r: f64) -> (f64, f64, f64) {
        let (w_le, w_gt, effort) = cost.piecewise_weights();
        let k = self.centred.len();
        let x = r - self.shift;
        let split = if self.ordered { self.centred.partition_point(|&s| s <= x) } else { k };
        let (p1, p2) = (self.prefix1[k], self.prefix2[k]);
        let (s1_le, s2_le) = (self.prefix1[split], self.prefix2[split]);
        let (s1_gt, s2_gt) = (p1 - s1_le, p2 - s2_le);
        let (c_le, c_gt) = (split as f64, (k - split) as f64);

        let sq_le = c_le * x * x - 2.0 * x * s1_le + s2_le;
        let sq_gt = c_gt * x * x - 2.0 * x * s1_gt + s2_gt;
        let kf = k as f64;
        let loss = w_le * sq_le + w_gt * sq_gt + effort * kf * r * r;
        let d1 = 2.0 * (w_le * (c_le * x - s1_le) + w_gt * (c_gt * x - s1_gt)) + 2.0 * effort * kf * r;
        let d2 = 2.0 * (w_le * c_le + w_gt * c_gt) + 2.0 * effort * kf;
        (loss, d1, d2)
    }

    /// Double average of the loss over these states and responses
    /// `r_n = a * exp(sigma_r * eta_n)`, with its first two derivatives in `a`.
    pub fn expected_loss(&self, cost: &CostSpec, a: f64, sigma_r: f64, response_noise: &[f64]) -> (f64, f64, f64) {
        let (mut l, mut g, mut h) = (0.0, 0.0, 0.0);
        for &eta in response_noise {
            let scale = (sigma_r * eta).exp();
            let (l_n, d1, d2) = self.loss_sum(cost, a * scale);
            l += l_n;
            g += d1 * scale;
            h += d2 * scale * scale;
        }
        let norm = (self.centred.len() * response_noise.len()) as f64;
        (l / norm, g / norm, h / norm)
    }
}
