//! Composite Gauss–Legendre rules.
//!
//! Every quadrature point used by the solver comes from a [`Grid1D`]: one
//! rule per coordinate, built once and never resampled.

use crate::error::{Result, TnnError};

/// Largest single-interval rule we build.
pub const MAX_POINTS: usize = 64;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Evaluates the Legendre polynomial `P_n` and its derivative at `x`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// nodes in increasing order.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_POINTS {
        return Err(TnnError::invalid(format!(
            "gauss_legendre: n = {n} outside 1..={MAX_POINTS}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Chebyshev-like initial guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// Composite Gauss–Legendre rule over one coordinate interval.
///
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    subintervals: usize,
    points_per_subinterval: usize,
}

impl Grid1D {
    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn subintervals(&self) -> usize {
        self.subintervals
    }

    pub fn points_per_subinterval(&self) -> usize {
        self.points_per_subinterval
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// Quadrature of `f` over the interval.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Splits `[lo, hi]` into `subintervals` equal pieces and places an `n`-point
/// Gauss rule on each.
pub fn composite_rule(lo: f64, hi: f64, subintervals: usize, n: usize) -> Result<Grid1D> {
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(TnnError::invalid(format!(
            "composite_rule: need finite lo < hi, got [{lo}, {hi}]"
        )));
    }
    if subintervals == 0 {
        return Err(TnnError::invalid("composite_rule: subintervals must be positive"));
    }
    let (ref_nodes, ref_weights) = gauss_legendre(n)?;
    let h = (hi - lo) / subintervals as f64;
    let half = 0.5 * h;
    let mut nodes = Vec::with_capacity(subintervals * n);
    let mut weights = Vec::with_capacity(subintervals * n);
    for s in 0..subintervals {
        let a = lo + s as f64 * h;
        let mid = a + half;
        for (&t, &w) in ref_nodes.iter().zip(&ref_weights) {
            nodes.push(mid + half * t);
            weights.push(half * w);
        }
    }
    Ok(Grid1D {
        lo,
        hi,
        nodes,
        weights,
        subintervals,
        points_per_subinterval: n,
    })
}

/// Weighted sum `Σ w_n · samples[n]`.
pub fn integrate_1d(grid: &Grid1D, samples: &[f64]) -> Result<f64> {
    if samples.len() != grid.len() {
        return Err(TnnError::invalid(format!(
            "integrate_1d: {} samples for {} nodes",
            samples.len(),
            grid.len()
        )));
    }
    Ok(grid.weights.iter().zip(samples).map(|(w, s)| w * s).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_and_two_point_rules() {
        let (x, w) = gauss_legendre(1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - 2.0).abs() < 1e-15);

        let (x, w) = gauss_legendre(2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert!((x[0] + r).abs() < 1e-15 && (x[1] - r).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn five_point_rule_integrates_x8() {
        let (x, w) = gauss_legendre(5).unwrap();
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((q - 2.0 / 9.0).abs() < 1e-14, "{q}");
    }

    #[test]
    fn out_of_range_point_counts_are_rejected() {
        assert!(matches!(gauss_legendre(0), Err(TnnError::InvalidArgument(_))));
        assert!(matches!(gauss_legendre(65), Err(TnnError::InvalidArgument(_))));
        assert!(gauss_legendre(64).is_ok());
    }

    #[test]
    fn large_rules_are_symmetric_and_positive() {
        for n in [16, 33, 64] {
            let (x, w) = gauss_legendre(n).unwrap();
            for i in 0..n {
                assert!(w[i] > 0.0);
                assert!((x[i] + x[n - 1 - i]).abs() < 1e-15);
                assert!((w[i] - w[n - 1 - i]).abs() < 1e-15);
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn composite_rule_shapes_and_weights() {
        let g = composite_rule(0.0, 1.0, 10, 16).unwrap();
        assert_eq!(g.len(), 160);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.nodes().windows(2).all(|p| p[0] < p[1]));
        assert!(g.nodes().iter().all(|&x| x > 0.0 && x < 1.0));

        let g = composite_rule(-5.0, 5.0, 100, 16).unwrap();
        assert_eq!(g.len(), 1600);
        assert!((g.weights().iter().sum::<f64>() - 10.0).abs() < 1e-11);
    }

    #[test]
    fn composite_rule_integrates_sine() {
        let g = composite_rule(0.0, 1.0, 10, 16).unwrap();
        let q = g.integrate(|x| (PI * x).sin());
        assert!((q - 2.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn composite_rule_rejects_empty_interval() {
        assert!(composite_rule(1.0, 1.0, 4, 4).is_err());
        assert!(composite_rule(2.0, 1.0, 4, 4).is_err());
        assert!(composite_rule(0.0, 1.0, 0, 4).is_err());
    }

    #[test]
    fn integrate_1d_examples() {
        let g = composite_rule(0.0, 1.0, 10, 16).unwrap();
        let ones = vec![1.0; g.len()];
        assert!((integrate_1d(&g, &ones).unwrap() - 1.0).abs() < 1e-14);
        let xs = g.nodes().to_vec();
        assert!((integrate_1d(&g, &xs).unwrap() - 0.5).abs() < 1e-14);
        let ex = g.sample(f64::exp);
        assert!((integrate_1d(&g, &ex).unwrap() - (1f64.exp() - 1.0)).abs() < 1e-12);
        assert!(integrate_1d(&g, &ones[1..]).is_err());
    }

    #[test]
    fn affine_consistency() {
        let f = |x: f64| (3.0 * x).cos() * x * x;
        let (lo, hi) = (-2.0, 3.5);
        let direct = composite_rule(lo, hi, 7, 5).unwrap().integrate(f);
        let pulled = composite_rule(0.0, 1.0, 7, 5)
            .unwrap()
            .integrate(|t| f(lo + (hi - lo) * t))
            * (hi - lo);
        assert!((direct - pulled).abs() < 1e-13 * direct.abs().max(1.0));
    }

    #[test]
    fn refinement_converges_at_high_order() {
        // n = 2 gives order 4: halving h should cut the error by ~16.
        let exact = 1f64.exp() - 1.0;
        let err = |s: usize| (composite_rule(0.0, 1.0, s, 2).unwrap().integrate(f64::exp) - exact).abs();
        let (e1, e2, e3) = (err(2), err(4), err(8));
        assert!(e2 < e1 && e3 < e2);
        let rate = (e2 / e3).log2();
        assert!(rate > 3.7 && rate < 4.3, "observed order {rate}");
    }
}
