//! Bracketed one-dimensional minimisation.

/// Outcome of a golden-section search.
#[derive(Clone, Copy, Debug)]
pub struct Bracketed {
    pub x: f64,
    pub fx: f64,
    /// Final bracket.
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    pub converged: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a minimum of `f` on `[lo, hi]`, stopping when
/// the bracket is narrower than `tol` or after `max_iter` evaluations.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Bracketed {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iterations = 2;
    while hi - lo > tol && iterations < max_iter {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        iterations += 1;
    }
    let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Bracketed { x, fx, lo, hi, iterations, converged: hi - lo <= tol }
}

/// Secant iterations on the derivative `g` (a one-dimensional quasi-Newton
/// method), safeguarded to stay inside `[lo, hi]`. Returns the root estimate
/// and the last derivative value, or `None` if the iteration leaves the
/// interval or stalls.
pub fn secant_root<G: FnMut(f64) -> f64>(
    mut g: G,
    x0: f64,
    x1: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Option<(f64, f64)> {
    let (mut xa, mut xb) = (x0, x1);
    let (mut ga, mut gb) = (g(xa), g(xb));
    for _ in 0..max_iter {
        if gb == 0.0 {
            return Some((xb, gb));
        }
        let denom = gb - ga;
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        let next = xb - gb * (xb - xa) / denom;
        if !(next >= lo && next <= hi) {
            return None;
        }
        xa = xb;
        ga = gb;
        xb = next;
        gb = g(xb);
        if (xb - xa).abs() <= tol * xb.abs().max(1.0) {
            return Some((xb, gb));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_vertex() {
        let r = golden_section(|x| (x - 1.234).powi(2) + 3.0, -10.0, 10.0, 1e-10, 500);
        assert!(r.converged);
        // flatness near the vertex limits resolution to about sqrt(eps)
        assert!((r.x - 1.234).abs() < 1e-7);
    }

    #[test]
    fn handles_kinked_objective() {
        let r = golden_section(|x: f64| if x > 0.3 { 4.0 * (x - 0.3) } else { 0.3 - x }, -1.0, 2.0, 1e-12, 500);
        assert!((r.x - 0.3).abs() < 1e-10);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let r = golden_section(|x| x * x, -1.0, 1.0, 1e-15, 10);
        assert!(!r.converged);
        assert_eq!(r.iterations, 10);
    }

    #[test]
    fn secant_refines_root() {
        let (x, g) = secant_root(|x| x.exp() - 2.0, 0.5, 0.6, 0.0, 1.0, 1e-14, 50).unwrap();
        assert!((x - 2f64.ln()).abs() < 1e-13);
        assert!(g.abs() < 1e-12);
    }
}
