//! Batched multilayer perceptron with swish hidden units, a linear output
//! layer and reverse-mode gradients. Matrices are row-major `Vec<f64>`; a
//! batch is `rows x width`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_in x n_out`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense { n_in, n_out, weights: vec![0.0; n_in * n_out], biases: vec![0.0; n_out] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Intermediate values of a forward pass, needed by [`Mlp::backward`].
pub struct Tape {
    rows: usize,
    /// Input of every layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    /// Sigmoid of each hidden pre-activation.
    sig: Vec<Vec<f64>>,
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
pub(crate) fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Swish derivative at `x` given `s = sigmoid(x)`.
#[inline]
fn swish_grad(x: f64, s: f64) -> f64 {
    s * (1.0 + x * (1.0 - s))
}

/// `c = a (m x k) * b (k x n) + beta c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes buffers whose extents match the stated
    // dimensions and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Layer sizes `widths = [input, hidden..., output]`, fan-in scaled
    /// uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (3.0 / n_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                Dense {
                    n_in,
                    n_out,
                    weights: (0..n_in * n_out).map(|_| dist.sample(rng)).collect(),
                    biases: vec![0.0; n_out],
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp { layers: self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect() }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(|l| l.n_out).unwrap_or(0)
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_inputs()];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn affine(layer: &Dense, x: &[f64], rows: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(rows * layer.n_out);
        for _ in 0..rows {
            z.extend_from_slice(&layer.biases);
        }
        gemm(rows, layer.n_in, layer.n_out, x, layer.n_in, 1, &layer.weights, layer.n_out, 1, 1.0, &mut z);
        z
    }

    /// Outputs (`rows x n_outputs`) without recording a tape.
    pub fn predict(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.n_inputs());
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = Self::affine(layer, &h, rows);
            if i < last {
                h.iter_mut().for_each(|v| *v = swish(*v));
            }
        }
        h
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, Tape) {
        debug_assert_eq!(x.len(), rows * self.n_inputs());
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut sig = Vec::with_capacity(last);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &h, rows);
            inputs.push(h);
            if i < last {
                let s: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                h = z.iter().zip(&s).map(|(v, s)| v * s).collect();
                pre.push(z);
                sig.push(s);
            } else {
                h = z;
            }
        }
        (h, Tape { rows, inputs, pre, sig })
    }

    /// Pulls the output cotangent `d_out` back through the network.
    /// Parameter gradients are accumulated into `grads` when given; the
    /// input cotangent (`rows x n_inputs`) is returned.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], mut grads: Option<&mut Mlp>) -> Vec<f64> {
        let rows = tape.rows;
        let mut dz = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = &tape.inputs[i];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[i];
                // dW += x^T dz
                gemm(layer.n_in, rows, layer.n_out, x, 1, layer.n_in, &dz, layer.n_out, 1, 1.0, &mut gl.weights);
                for r in 0..rows {
                    for (gb, d) in gl.biases.iter_mut().zip(&dz[r * layer.n_out..(r + 1) * layer.n_out]) {
                        *gb += d;
                    }
                }
            }
            // dx = dz W^T
            let mut dx = vec![0.0; rows * layer.n_in];
            gemm(rows, layer.n_out, layer.n_in, &dz, layer.n_out, 1, &layer.weights, 1, layer.n_out, 0.0, &mut dx);
            if i > 0 {
                for ((d, &z), &s) in dx.iter_mut().zip(&tape.pre[i - 1]).zip(&tape.sig[i - 1]) {
                    *d *= swish_grad(z, s);
                }
            }
            dz = dx;
        }
        dz
    }
}
