//! No-U-Turn sampler with multinomial trajectory sampling, generalised
//! U-turn checks across subtrees, dual-averaging step size adaptation and
//! windowed diagonal metric adaptation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `q`, writing its gradient into `grad`. A non-finite
    /// value marks `q` as outside the support.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;

    /// A random starting point.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    /// Post-warmup draws per chain.
    pub n_samples: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    /// Energy error beyond which a trajectory counts as divergent.
    pub max_delta_h: f64,
    pub init_attempts: usize,
    pub metric: MetricKind,
}

/// Form of the mass matrix adapted during warmup.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Diagonal,
    /// Full covariance; handles correlated parameters at O(dim^2) per step
    /// but needs long warmup windows when `dim` is large.
    Dense,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_warmup: 5000,
            n_samples: 5000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
            max_delta_h: 1000.0,
            init_attempts: 100,
            metric: MetricKind::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_samples == 0 || self.max_tree_depth == 0 || self.init_attempts == 0 {
            return Err(Error::Config("sampler counts must be >= 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        Ok(())
    }
}

/// Post-warmup output of one chain.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    /// `n_samples x dim`, row-major, unconstrained coordinates.
    pub draws: Vec<f64>,
    pub log_density: Vec<f64>,
    pub step_size: f64,
    /// Adapted inverse mass matrix: `dim` variances, or `dim x dim` row-major
    /// for [`MetricKind::Dense`].
    pub inv_metric: Vec<f64>,
    pub divergences: usize,
    pub mean_accept: f64,
    pub n_leapfrog: usize,
    pub max_depth_hits: usize,
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// Inverse mass matrix.
#[derive(Clone, Debug)]
enum Metric {
    Diagonal(Vec<f64>),
    /// Row-major covariance `inv = L L^T` and `factor = L^{-T}`, which maps
    /// standard-normal draws to momenta.
    Dense {
        dim: usize,
        inv: Vec<f64>,
        factor: Vec<f64>,
    },
}

fn mat_vec(dim: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    m.chunks_exact(dim).map(|row| dot(row, v)).collect()
}

impl Metric {
    fn unit(kind: MetricKind, dim: usize) -> Self {
        match kind {
            MetricKind::Diagonal => Metric::Diagonal(vec![1.0; dim]),
            MetricKind::Dense => {
                let eye: Vec<f64> = (0..dim * dim).map(|k| if k % (dim + 1) == 0 { 1.0 } else { 0.0 }).collect();
                Metric::Dense { dim, inv: eye.clone(), factor: eye }
            }
        }
    }

    /// Dense metric from a covariance, or `None` if it is not positive definite.
    fn dense(dim: usize, inv: Vec<f64>) -> Option<Self> {
        let l = nalgebra::DMatrix::from_row_slice(dim, dim, &inv).cholesky()?.l();
        let factor = l.try_inverse()?.transpose();
        Some(Metric::Dense { dim, inv, factor: factor.transpose().as_slice().to_vec() })
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Metric::Diagonal(m) => p.iter().zip(m).map(|(p, m)| p * m).collect(),
            Metric::Dense { dim, inv, .. } => mat_vec(*dim, inv, p),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        match self {
            Metric::Diagonal(m) => m.clone(),
            Metric::Dense { inv, .. } => inv.clone(),
        }
    }
}

struct Hamiltonian<'a, M: LogDensity + ?Sized> {
    model: &'a M,
    metric: Metric,
}

impl<M: LogDensity + ?Sized> Hamiltonian<'_, M> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * dot(p, &self.metric.p_sharp(p))
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        self.metric.p_sharp(p)
    }

    fn refresh(&self, z: &mut Point) {
        z.logp = self.model.log_density_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
        }
    }

    fn sample_momentum(&self, z: &mut Point, rng: &mut ChaCha8Rng) {
        match &self.metric {
            Metric::Diagonal(m) => {
                for (p, m) in z.p.iter_mut().zip(m) {
                    let e: f64 = rng.sample(StandardNormal);
                    *p = e / m.sqrt();
                }
            }
            Metric::Dense { dim, factor, .. } => {
                let e: Vec<f64> = (0..*dim).map(|_| rng.sample(StandardNormal)).collect();
                z.p = mat_vec(*dim, factor, &e);
            }
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        let v = self.metric.p_sharp(&z.p);
        for (q, v) in z.q.iter_mut().zip(&v) {
            *q += eps * v;
        }
        self.refresh(z);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct Transition {
    point: Point,
    accept: f64,
    n_leapfrog: usize,
    depth: usize,
    divergent: bool,
}

/// Per-transition scratch state mirroring a single NUTS iteration.
struct Tree<'a, 'b, M: LogDensity + ?Sized> {
    ham: &'a Hamiltonian<'b, M>,
    eps: f64,
    h0: f64,
    max_delta_h: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Edge {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
}

impl<M: LogDensity + ?Sized> Tree<'_, '_, M> {
    /// Extends the trajectory from `z` by `2^depth` leapfrog steps in
    /// direction `sign`. On return `z` is the new edge point.
    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        rho: &mut [f64],
        log_sum_weight: &mut f64,
        sign: f64,
        rng: &mut ChaCha8Rng,
    ) -> (bool, Edge) {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - self.h0 > self.max_delta_h {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            z_propose.clone_from(z);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            let ps = self.ham.p_sharp(&z.p);
            return (
                !self.divergent,
                Edge { p_sharp_beg: ps.clone(), p_sharp_end: ps, p_beg: z.p.clone(), p_end: z.p.clone() },
            );
        }

        let dim = rho.len();
        let mut lsw_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; dim];
        let (valid_init, init) = self.build(depth - 1, z, z_propose, &mut rho_init, &mut lsw_init, sign, rng);
        if !valid_init {
            return (false, init);
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; dim];
        let (valid_final, fin) =
            self.build(depth - 1, z, &mut z_propose_final, &mut rho_final, &mut lsw_final, sign, rng);
        let edge = Edge {
            p_sharp_beg: init.p_sharp_beg.clone(),
            p_sharp_end: fin.p_sharp_end.clone(),
            p_beg: init.p_beg.clone(),
            p_end: fin.p_end.clone(),
        };
        if !valid_final {
            return (false, edge);
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            z_propose.clone_from(&z_propose_final);
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if rng.random::<f64>() < accept {
                z_propose.clone_from(&z_propose_final);
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&edge.p_sharp_beg, &edge.p_sharp_end, &rho_subtree);
        persist &= no_u_turn(&edge.p_sharp_beg, &fin.p_sharp_beg, &add(&rho_init, &fin.p_beg));
        persist &= no_u_turn(&init.p_sharp_end, &edge.p_sharp_end, &add(&rho_final, &init.p_end));
        (persist, edge)
    }
}

fn transition<M: LogDensity + ?Sized>(
    ham: &Hamiltonian<'_, M>,
    start: &Point,
    eps: f64,
    max_depth: usize,
    max_delta_h: f64,
    rng: &mut ChaCha8Rng,
) -> Transition {
    let mut z0 = start.clone();
    ham.sample_momentum(&mut z0, rng);
    let h0 = ham.energy(&z0);
    let ps0 = ham.p_sharp(&z0.p);

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut z_sample = z0.clone();
    let mut z_propose = z0.clone();

    let mut p_sharp_fwd_fwd = ps0.clone();
    let (mut p_fwd_bck, mut p_sharp_fwd_bck) = (z0.p.clone(), ps0.clone());
    let (mut p_bck_fwd, mut p_sharp_bck_fwd) = (z0.p.clone(), ps0.clone());
    let mut p_sharp_bck_bck = ps0;
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;

    let mut tree = Tree { ham, eps, h0, max_delta_h, n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
    let mut depth = 0;
    let dim = rho.len();
    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let valid = if rng.random::<f64>() > 0.5 {
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_bck);
            p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
            let (valid, edge) = tree.build(depth, &mut z_fwd, &mut z_propose, &mut rho_fwd, &mut lsw_subtree, 1.0, rng);
            p_sharp_fwd_bck = edge.p_sharp_beg;
            p_sharp_fwd_fwd = edge.p_sharp_end;
            p_fwd_bck = edge.p_beg;
            valid
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_fwd);
            p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
            let (valid, edge) =
                tree.build(depth, &mut z_bck, &mut z_propose, &mut rho_bck, &mut lsw_subtree, -1.0, rng);
            p_sharp_bck_fwd = edge.p_sharp_beg;
            p_sharp_bck_bck = edge.p_sharp_end;
            p_bck_fwd = edge.p_beg;
            valid
        };
        if !valid {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight {
            z_sample.clone_from(&z_propose);
        } else {
            let accept = (lsw_subtree - log_sum_weight).exp();
            if rng.random::<f64>() < accept {
                z_sample.clone_from(&z_propose);
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }
    let n_leapfrog = tree.n_leapfrog.max(1);
    Transition {
        point: z_sample,
        accept: tree.sum_metro_prob / n_leapfrog as f64,
        n_leapfrog: tree.n_leapfrog,
        depth,
        divergent: tree.divergent,
    }
}

/// Nesterov dual averaging of `ln eps`.
struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    fn new(target: f64, eps: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: an initial fast buffer, a series of doubling slow windows
/// in which the metric is estimated, and a terminal fast buffer.
struct Windows {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    counter: usize,
    window_size: usize,
    next_window: usize,
    active: bool,
}

impl Windows {
    fn new(n_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        let active = n_warmup >= 20;
        if active && init_buffer + base_window + term_buffer > n_warmup {
            init_buffer = (0.15 * n_warmup as f64) as usize;
            term_buffer = (0.1 * n_warmup as f64) as usize;
            base_window = n_warmup - (init_buffer + term_buffer);
        }
        Windows {
            n_warmup,
            init_buffer,
            term_buffer,
            counter: 0,
            window_size: base_window,
            next_window: init_buffer + base_window - 1,
            active,
        }
    }

    fn in_window(&self) -> bool {
        self.active
            && self.counter >= self.init_buffer
            && self.counter < self.n_warmup - self.term_buffer
            && self.counter != self.n_warmup
    }

    fn end_of_window(&self) -> bool {
        self.active && self.counter == self.next_window && self.counter != self.n_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.n_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.n_warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

/// Welford running variance, or covariance when `dense`.
struct Welford {
    n: usize,
    dense: bool,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize, kind: MetricKind) -> Self {
        let dense = kind == MetricKind::Dense;
        Welford { n: 0, dense, mean: vec![0.0; dim], m2: vec![0.0; if dense { dim * dim } else { dim }] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let dim = x.len();
        let before: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&before) {
            *m += d / self.n as f64;
        }
        for i in 0..dim {
            if self.dense {
                for j in 0..dim {
                    self.m2[i * dim + j] += before[i] * (x[j] - self.mean[j]);
                }
            } else {
                self.m2[i] += before[i] * (x[i] - self.mean[i]);
            }
        }
    }

    /// Regularised estimate, shrunk towards `1e-3 I`.
    fn regularized(&self) -> Metric {
        let n = self.n as f64;
        let dim = self.mean.len();
        let shrink = |s: f64, diagonal: bool| {
            let var = if self.n > 1 {
                s / (n - 1.0)
            } else if diagonal {
                1.0
            } else {
                0.0
            };
            (n / (n + 5.0)) * var + if diagonal { 1e-3 * (5.0 / (n + 5.0)) } else { 0.0 }
        };
        if !self.dense {
            return Metric::Diagonal(self.m2.iter().map(|&s| shrink(s, true)).collect());
        }
        let inv: Vec<f64> = self.m2.iter().enumerate().map(|(k, &s)| shrink(s, k % (dim + 1) == 0)).collect();
        Metric::dense(dim, inv.clone())
            .unwrap_or_else(|| Metric::Diagonal((0..dim).map(|i| inv[i * dim + i]).collect()))
    }
}

/// Heuristic initial step size: doubles or halves `eps` until the one-step
/// acceptance crosses 0.8.
fn init_step_size<M: LogDensity + ?Sized>(
    ham: &Hamiltonian<'_, M>,
    z: &Point,
    mut eps: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if eps == 0.0 || eps > 1e7 || eps.is_nan() {
        return eps;
    }
    let threshold = 0.8f64.ln();
    let delta_h = |eps: f64, rng: &mut ChaCha8Rng| {
        let mut trial = z.clone();
        ham.sample_momentum(&mut trial, rng);
        let h0 = ham.energy(&trial);
        ham.leapfrog(&mut trial, eps);
        h0 - ham.energy(&trial)
    };
    let direction = if delta_h(eps, rng) > threshold { 1 } else { -1 };
    loop {
        let dh = delta_h(eps, rng);
        if (direction == 1 && !(dh > threshold)) || (direction == -1 && !(dh < threshold)) {
            break;
        }
        eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
        if !(1e-12..=1e7).contains(&eps) {
            break;
        }
    }
    eps
}

fn initial_state<M: LogDensity + ?Sized>(model: &M, attempts: usize, rng: &mut ChaCha8Rng) -> Result<Point> {
    let dim = model.dim();
    for _ in 0..attempts {
        let q = model.initial_point(rng);
        let mut grad = vec![0.0; dim];
        let logp = model.log_density_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(Point { q, p: vec![0.0; dim], grad, logp });
        }
    }
    Err(Error::Initialization { attempts })
}

/// Runs one chain (warmup then sampling) with its own generator.
pub fn run_chain<M: LogDensity + ?Sized>(model: &M, cfg: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, chain as u64);
    let dim = model.dim();
    let mut z = initial_state(model, cfg.init_attempts, &mut rng)?;
    let mut ham = Hamiltonian { model, metric: Metric::unit(cfg.metric, dim) };

    let mut eps = init_step_size(&ham, &z, 1.0, &mut rng);
    let mut dual = DualAveraging::new(cfg.target_accept, eps);
    let mut windows = Windows::new(cfg.n_warmup);
    let mut welford = Welford::new(dim, cfg.metric);

    for _ in 0..cfg.n_warmup {
        let t = transition(&ham, &z, eps, cfg.max_tree_depth, cfg.max_delta_h, &mut rng);
        z = t.point;
        eps = dual.learn(t.accept);
        if windows.in_window() {
            welford.add(&z.q);
        }
        if windows.end_of_window() {
            windows.compute_next_window();
            ham.metric = welford.regularized();
            welford = Welford::new(dim, cfg.metric);
            eps = init_step_size(&ham, &z, eps, &mut rng);
            dual.restart(eps);
        }
        windows.counter += 1;
    }
    if cfg.n_warmup > 0 {
        eps = dual.final_step_size();
    }

    let mut out = ChainOutput {
        draws: Vec::with_capacity(cfg.n_samples * dim),
        log_density: Vec::with_capacity(cfg.n_samples),
        step_size: eps,
        inv_metric: ham.metric.flatten(),
        divergences: 0,
        mean_accept: 0.0,
        n_leapfrog: 0,
        max_depth_hits: 0,
    };
    for _ in 0..cfg.n_samples {
        let t = transition(&ham, &z, eps, cfg.max_tree_depth, cfg.max_delta_h, &mut rng);
        z = t.point;
        out.draws.extend_from_slice(&z.q);
        out.log_density.push(z.logp);
        out.divergences += t.divergent as usize;
        out.mean_accept += t.accept;
        out.n_leapfrog += t.n_leapfrog;
        out.max_depth_hits += (t.depth >= cfg.max_tree_depth) as usize;
    }
    out.mean_accept /= cfg.n_samples as f64;
    Ok(out)
}

/// Runs `cfg.n_chains` chains in parallel. Chain `c` uses a generator derived
/// from `(cfg.seed, c)`, so results do not depend on scheduling.
pub fn run_chains<M: LogDensity + ?Sized>(model: &M, cfg: &SamplerConfig) -> Result<Vec<ChainOutput>> {
    cfg.validate()?;
    (0..cfg.n_chains).into_par_iter().map(|c| run_chain(model, cfg, c)).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Independent Gaussian target with the given means and scales.
    pub(crate) struct Gaussian {
        pub mean: Vec<f64>,
        pub sd: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.mean.len()
        }

        fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..q.len() {
                let z = (q[i] - self.mean[i]) / self.sd[i];
                lp -= 0.5 * z * z;
                grad[i] = -z / self.sd[i];
            }
            lp
        }

        fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
            (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
        }
    }

    #[test]
    fn windows_follow_the_standard_schedule() {
        let mut w = Windows::new(1000);
        let mut ends = Vec::new();
        for _ in 0..1000 {
            if w.end_of_window() {
                ends.push(w.counter);
                w.compute_next_window();
            }
            w.counter += 1;
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
        let small = Windows::new(100);
        assert_eq!((small.init_buffer, small.term_buffer, small.window_size), (15, 10, 75));
    }

    #[test]
    fn leapfrog_is_reversible() {
        let model = Gaussian { mean: vec![0.3, -1.0], sd: vec![1.0, 0.2] };
        let metrics = [Metric::Diagonal(vec![1.0, 0.5]), Metric::dense(2, vec![1.0, 0.3, 0.3, 0.5]).unwrap()];
        for metric in metrics {
            let ham = Hamiltonian { model: &model, metric };
            let mut z = Point { q: vec![0.5, -0.7], p: vec![0.4, 1.1], grad: vec![0.0; 2], logp: 0.0 };
            ham.refresh(&mut z);
            let start = z.clone();
            for _ in 0..10 {
                ham.leapfrog(&mut z, 0.05);
            }
            for _ in 0..10 {
                ham.leapfrog(&mut z, -0.05);
            }
            for (a, b) in z.q.iter().zip(&start.q) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_momentum_has_metric_inverse_covariance() {
        let model = Gaussian { mean: vec![0.0; 2], sd: vec![1.0; 2] };
        let ham = Hamiltonian { model: &model, metric: Metric::dense(2, vec![2.0, 0.6, 0.6, 0.5]).unwrap() };
        let mut rng = rng_for(1, 0);
        let mut z = Point { q: vec![0.0; 2], p: vec![0.0; 2], grad: vec![0.0; 2], logp: 0.0 };
        let n = 200_000;
        let mut cov = [0.0; 4];
        for _ in 0..n {
            ham.sample_momentum(&mut z, &mut rng);
            for i in 0..2 {
                for j in 0..2 {
                    cov[i * 2 + j] += z.p[i] * z.p[j] / n as f64;
                }
            }
        }
        // inverse of [[2, 0.6], [0.6, 0.5]] has determinant 0.64
        let expected = [0.5 / 0.64, -0.6 / 0.64, -0.6 / 0.64, 2.0 / 0.64];
        for (c, e) in cov.iter().zip(expected) {
            assert!((c - e).abs() < 0.03 * e.abs().max(1.0), "{cov:?}");
        }
    }

    /// Bivariate normal with unit variances and correlation `rho`.
    struct Correlated {
        rho: f64,
    }

    impl LogDensity for Correlated {
        fn dim(&self) -> usize {
            2
        }

        fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let k = 1.0 / (1.0 - self.rho * self.rho);
            grad[0] = -k * (q[0] - self.rho * q[1]);
            grad[1] = -k * (q[1] - self.rho * q[0]);
            -0.5 * k * (q[0] * q[0] - 2.0 * self.rho * q[0] * q[1] + q[1] * q[1])
        }

        fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
            vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        }
    }

    #[test]
    fn dense_metric_learns_correlation() {
        let model = Correlated { rho: 0.95 };
        let cfg = SamplerConfig { n_chains: 2, n_warmup: 1000, n_samples: 2000, seed: 6, ..Default::default() };
        let diagonal = run_chains(&model, &cfg).unwrap();
        let dense = run_chains(&model, &SamplerConfig { metric: MetricKind::Dense, ..cfg }).unwrap();
        for c in &dense {
            assert_eq!(c.inv_metric.len(), 4);
            assert!((c.inv_metric[1] - 0.95).abs() < 0.15, "{:?}", c.inv_metric);
        }
        let steps = |cs: &[ChainOutput]| cs.iter().map(|c| c.n_leapfrog).sum::<usize>();
        assert!(steps(&dense) * 2 < steps(&diagonal), "{} vs {}", steps(&dense), steps(&diagonal));
        let xy: f64 = dense.iter().flat_map(|c| c.draws.chunks(2).map(|d| d[0] * d[1])).sum::<f64>() / 4000.0;
        assert!((xy - 0.95).abs() < 0.1, "{xy}");
    }

    #[test]
    fn recovers_anisotropic_gaussian() {
        let model = Gaussian { mean: vec![1.0, -2.0, 0.0], sd: vec![0.1, 3.0, 1.0] };
        for metric in [MetricKind::Diagonal, MetricKind::Dense] {
            let cfg =
                SamplerConfig { n_chains: 2, n_warmup: 500, n_samples: 1000, seed: 4, metric, ..Default::default() };
            let chains = run_chains(&model, &cfg).unwrap();
            for i in 0..3 {
                let xs: Vec<f64> = chains.iter().flat_map(|c| c.draws.chunks(3).map(move |d| d[i])).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
                assert!((mean - model.mean[i]).abs() < 0.15 * model.sd[i], "{i}: {mean}");
                assert!((sd / model.sd[i] - 1.0).abs() < 0.15, "{i}: {sd}");
            }
            for c in &chains {
                assert_eq!(c.divergences, 0);
                // the adapted metric should track the target variances
                let var = if metric == MetricKind::Dense { c.inv_metric[4] } else { c.inv_metric[1] };
                assert!((var / 9.0 - 1.0).abs() < 0.5, "{:?}", c.inv_metric);
            }
        }
    }

    #[test]
    fn chains_are_reproducible() {
        let model = Gaussian { mean: vec![0.0; 2], sd: vec![1.0; 2] };
        let cfg = SamplerConfig { n_chains: 2, n_warmup: 100, n_samples: 50, seed: 9, ..Default::default() };
        let a = run_chains(&model, &cfg).unwrap();
        let b = run_chains(&model, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.draws, y.draws);
        }
        let serial = run_chain(&model, &cfg, 1).unwrap();
        assert_eq!(serial.draws, a[1].draws);
    }

    struct Nowhere;
    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_grad(&self, _: &[f64], _: &mut [f64]) -> f64 {
            f64::NEG_INFINITY
        }
        fn initial_point(&self, _: &mut ChaCha8Rng) -> Vec<f64> {
            vec![0.0]
        }
    }

    #[test]
    fn fails_after_initialization_attempts() {
        let cfg = SamplerConfig { n_warmup: 10, n_samples: 10, ..Default::default() };
        assert!(matches!(run_chain(&Nowhere, &cfg, 0), Err(Error::Initialization { attempts: 100 })));
    }
}
