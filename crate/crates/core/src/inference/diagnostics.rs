//! Rank-normalised split R-hat and effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    /// Maximum of the bulk and tail (folded) rank-normalised split R-hat.
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    /// Split-chain ESS of the raw draws, for Monte Carlo standard errors of the mean.
    pub ess_mean: f64,
    /// Set when every draw is identical; R-hat is then reported as 1.
    pub degenerate: bool,
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let half = n / 2;
    chains.iter().flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()]).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction of already split chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Normal scores of the pooled fractional ranks (ties share their average rank).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = chains[0].len();
    let mut all: Vec<(f64, usize)> = chains.iter().flatten().copied().zip(0..).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len();
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let z: Vec<f64> = ranks.iter().map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25))).collect();
    z.chunks(len).map(|c| c.to_vec()).collect()
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// ESS of already split chains, with Geyer's initial monotone sequence.
fn ess_split(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let chain_var: Vec<f64> = chains.iter().map(|c| autocovariance(c, 0) * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if chains.len() > 1 {
        var_plus += sample_var(&chains.iter().map(|c| mean(c)).collect::<Vec<_>>());
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| -> f64 {
        let acov = chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m;
        1.0 - (mean_var - acov) / var_plus
    };

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut t = 1;
    while t + 2 < n.saturating_sub(3) && rho_even + rho_odd > 0.0 {
        rho_even = rho(t + 1);
        rho_odd = rho(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t + 1] = rho_even;
            rho_hat[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = m * nf;
    let extra = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..=max_t.min(n - 1)].iter().sum::<f64>() + extra).max(1.0 / total.log10());
    total / tau
}

fn check_shape(chains: &[Vec<f64>]) -> Result<()> {
    let draws = chains.first().map(|c| c.len()).unwrap_or(0);
    if chains.len() < 2 || draws < 4 || chains.iter().any(|c| c.len() != draws) {
        return Err(Error::InsufficientDraws { chains: chains.len(), draws });
    }
    Ok(())
}

/// Diagnostics of one scalar quantity from `chains` of equal length.
pub fn diagnose(chains: &[Vec<f64>]) -> Result<ParamDiagnostics> {
    check_shape(chains)?;
    let first = chains[0][0];
    if chains.iter().flatten().all(|&x| x == first) {
        let total = (chains.len() * chains[0].len()) as f64;
        return Ok(ParamDiagnostics { rhat: 1.0, ess_bulk: total, ess_tail: total, ess_mean: total, degenerate: true });
    }
    let halves = split(chains);
    let bulk = rank_normalize(&halves);
    let mut pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let median = crate::amortizer::quantile(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|x| (x - median).abs()).collect()).collect();
    let tail = rank_normalize(&folded);
    let rhat = rhat_basic(&bulk).max(rhat_basic(&tail));

    let (q05, q95) = (crate::amortizer::quantile(&pooled, 0.05), crate::amortizer::quantile(&pooled, 0.95));
    let indicator = |q: f64| -> Vec<Vec<f64>> {
        halves.iter().map(|c| c.iter().map(|&x| (x <= q) as u8 as f64).collect()).collect()
    };
    let ess_tail = ess_split(&indicator(q05)).min(ess_split(&indicator(q95)));
    Ok(ParamDiagnostics { rhat, ess_bulk: ess_split(&bulk), ess_tail, ess_mean: ess_split(&halves), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn constant_chains_are_flagged() {
        let d = diagnose(&[vec![2.0; 10], vec![2.0; 10]]).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.rhat, 1.0);
    }

    #[test]
    fn independent_chains_mix() {
        let d = diagnose(&normal_chains(4, 10_000, 1)).unwrap();
        assert!(d.rhat < 1.01, "{}", d.rhat);
        assert!(d.ess_bulk > 30_000.0 && d.ess_bulk < 50_000.0, "{}", d.ess_bulk);
        assert!(d.ess_mean > 30_000.0, "{}", d.ess_mean);
    }

    #[test]
    fn offset_chain_is_detected() {
        let mut chains = normal_chains(4, 1000, 2);
        chains[3].iter_mut().for_each(|x| *x += 10.0);
        assert!(diagnose(&chains).unwrap().rhat > 1.5);
    }

    #[test]
    fn autocorrelated_chain_has_reduced_ess() {
        // AR(1) with phi = 0.9: ESS / N is about (1 - phi) / (1 + phi)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..20_000)
                    .map(|_| {
                        x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let d = diagnose(&chains).unwrap();
        let expected = 80_000.0 * 0.1 / 1.9;
        assert!((d.ess_mean / expected - 1.0).abs() < 0.2, "{} vs {expected}", d.ess_mean);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(diagnose(&[vec![1.0; 10]]), Err(Error::InsufficientDraws { chains: 1, .. })));
        assert!(matches!(diagnose(&[vec![1.0; 3], vec![1.0; 3]]), Err(Error::InsufficientDraws { draws: 3, .. })));
    }
}
