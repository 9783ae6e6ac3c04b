//! Two-dimensional highest-density regions and a one-sample
//! Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A regular `n x n` grid over a rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2d {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub n: usize,
}

impl Grid2d {
    /// Smallest grid covering every sample set, padded by 10% on each side.
    pub fn covering(sets: &[(&[f64], &[f64])], n: usize) -> Self {
        let range = |values: Vec<f64>| {
            let (lo, hi) =
                values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let pad = 0.1 * (hi - lo).max(1e-12);
            (lo - pad, hi + pad)
        };
        let xs = sets.iter().flat_map(|s| s.0.iter().copied()).collect();
        let ys = sets.iter().flat_map(|s| s.1.iter().copied()).collect();
        Grid2d { x: range(xs), y: range(ys), n }
    }

    fn cell(&self, v: f64, (lo, hi): (f64, f64)) -> Option<usize> {
        let t = (v - lo) / (hi - lo);
        (0.0..1.0).contains(&t).then(|| (t * self.n as f64) as usize)
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let w = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * (k as f64 + 0.5) / self.n as f64;
        (w(self.x, i), w(self.y, j))
    }
}

/// Grid cells inside a highest-density region.
#[derive(Clone, Debug, PartialEq)]
pub struct HdiRegion {
    pub grid: Grid2d,
    /// Row-major by x cell then y cell.
    pub mask: Vec<bool>,
}

fn gaussian_kernel(sd: f64) -> Vec<f64> {
    if sd <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sd).ceil() as isize;
    let k: Vec<f64> = (-half..=half).map(|d| (-0.5 * (d as f64 / sd).powi(2)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

fn smooth(h: &[f64], n: usize, sd_cells: f64) -> Vec<f64> {
    let k = gaussian_kernel(sd_cells);
    let half = (k.len() / 2) as isize;
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (t, w) in k.iter().enumerate() {
                    let off = t as isize - half;
                    let (ii, jj) =
                        if along_x { (i as isize + off, j as isize) } else { (i as isize, j as isize + off) };
                    if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                        acc += w * src[ii as usize * n + jj as usize];
                    }
                }
                out[i * n + j] = acc;
            }
        }
        out
    };
    pass(&pass(h, true), false)
}

/// Region of highest smoothed histogram density holding `mass` of the draws.
pub fn hdi_region(x: &[f64], y: &[f64], grid: Grid2d, mass: f64, smoothing_cells: f64) -> Result<HdiRegion> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Config("HDI needs equally many non-zero x and y draws".into()));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::Config(format!("HDI mass must lie in (0, 1), got {mass}")));
    }
    let n = grid.n;
    let mut h = vec![0.0; n * n];
    for (&xv, &yv) in x.iter().zip(y) {
        if let (Some(i), Some(j)) = (grid.cell(xv, grid.x), grid.cell(yv, grid.y)) {
            h[i * n + j] += 1.0;
        }
    }
    let d = smooth(&h, n, smoothing_cells);
    let total: f64 = d.iter().sum();
    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut mask = vec![false; n * n];
    let mut acc = 0.0;
    for idx in order {
        if acc >= mass * total {
            break;
        }
        mask[idx] = true;
        acc += d[idx];
    }
    Ok(HdiRegion { grid, mask })
}

impl HdiRegion {
    pub fn area_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Centres of region cells that touch a cell outside the region.
    pub fn boundary_points(&self) -> Vec<(f64, f64)> {
        let n = self.grid.n;
        let inside = |i: isize, j: isize| {
            i >= 0 && j >= 0 && (i as usize) < n && (j as usize) < n && self.mask[i as usize * n + j as usize]
        };
        let mut points = Vec::new();
        for i in 0..n as isize {
            for j in 0..n as isize {
                if inside(i, j) && !(inside(i - 1, j) && inside(i + 1, j) && inside(i, j - 1) && inside(i, j + 1)) {
                    points.push(self.grid.center(i as usize, j as usize));
                }
            }
        }
        points
    }
}

/// Intersection over union of two regions on the same grid.
pub fn jaccard(a: &HdiRegion, b: &HdiRegion) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::Config("HDI regions lie on different grids".into()));
    }
    let (mut both, mut either) = (0usize, 0usize);
    for (&p, &q) in a.mask.iter().zip(&b.mask) {
        both += (p && q) as usize;
        either += (p || q) as usize;
    }
    Ok(if either == 0 { 1.0 } else { both as f64 / either as f64 })
}

/// Kolmogorov-Smirnov statistic and its asymptotic p-value (with
/// Stephens' small-sample correction) against a continuous `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(draws: &[f64], cdf: F) -> (f64, f64) {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn ks_accepts_matching_and_rejects_shifted_samples() {
        let normal = Normal::standard();
        let x = normals(20_000, 1);
        let (_, p) = ks_test(&x, |v| normal.cdf(v));
        assert!(p > 0.01, "{p}");
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!(ks_test(&shifted, |v| normal.cdf(v)).1 < 1e-6);
    }

    #[test]
    fn ks_p_value_matches_known_quantile() {
        // Evenly spaced uniform draws shifted so that the corrected statistic
        // sits at the asymptotic 1% critical value 1.6276.
        let n = 10_000usize;
        let sqrt_n = (n as f64).sqrt();
        let d = 1.6276 / (sqrt_n + 0.12 + 0.11 / sqrt_n);
        let shift = d - 0.5 / n as f64;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 + shift).collect();
        let (stat, p) = ks_test(&x, |v| v.clamp(0.0, 1.0));
        assert!((stat - d).abs() < 1e-12);
        assert!((p - 0.01).abs() < 1e-4, "{p}");
    }

    #[test]
    fn gaussian_hdi_has_the_expected_area() {
        // 94% region of a standard bivariate normal is a disc of radius sqrt(-2 ln 0.06).
        let (x, y) = (normals(200_000, 2), normals(200_000, 3));
        let grid = Grid2d { x: (-5.0, 5.0), y: (-5.0, 5.0), n: 80 };
        let region = hdi_region(&x, &y, grid, 0.94, 1.0).unwrap();
        let cell = (10.0 / 80.0f64).powi(2);
        let expected = std::f64::consts::PI * -2.0 * 0.06f64.ln();
        let area = region.area_cells() as f64 * cell;
        assert!((area / expected - 1.0).abs() < 0.05, "{area} vs {expected}");
        assert!(!region.boundary_points().is_empty());
    }

    #[test]
    fn jaccard_of_same_and_disjoint_regions() {
        let (x, y) = (normals(20_000, 4), normals(20_000, 5));
        let x2: Vec<f64> = x.iter().map(|v| v + 20.0).collect();
        let grid = Grid2d::covering(&[(&x, &y), (&x2, &y)], 80);
        let a = hdi_region(&x, &y, grid, 0.94, 1.0).unwrap();
        let b = hdi_region(&x2, &y, grid, 0.94, 1.0).unwrap();
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        let other = hdi_region(&x, &y, Grid2d { n: 40, ..grid }, 0.94, 1.0).unwrap();
        assert!(jaccard(&a, &other).is_err());
    }
}
