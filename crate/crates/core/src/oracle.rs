//! Brute-force reference computations.
//!
//! These routines deliberately take the expensive route: direct tensor-grid
//! quadrature over all `Π N_i` points and central finite differences over
//! every parameter. They exist to check the separated scheme and the
//! analytic gradients, and are only practical for small `d` and tiny models.

use crate::diffengine::DualBatch;
use crate::network::TnnModel;
use crate::quadrature::Grid1D;

/// `Σ_n w^{(n)} f(x^{(n)}, Ψ(x^{(n)}), ∇Ψ(x^{(n)}))` over the full tensor grid.
///
/// `Ψ` and `∇Ψ` are assembled pointwise from the per-dimension batches.
pub fn full_grid_integral(batches: &[DualBatch], grids: &[Grid1D], f: impl Fn(&[f64], f64, &[f64]) -> f64) -> f64 {
    let d = grids.len();
    let p = batches[0].rank();
    let sizes: Vec<usize> = grids.iter().map(Grid1D::len).collect();
    let total: usize = sizes.iter().product();
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut sum = 0.0;
    for _ in 0..total {
        let mut w = 1.0;
        for i in 0..d {
            point[i] = grids[i].nodes()[idx[i]];
            w *= grids[i].weights()[idx[i]];
        }
        let mut psi = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for j in 0..p {
            let mut prod = 1.0;
            for i in 0..d {
                prod *= batches[i].values[[j, idx[i]]];
            }
            psi += prod;
            for (i, g) in grad.iter_mut().enumerate() {
                let mut t = batches[i].dvalues[[j, idx[i]]];
                for (k, b) in batches.iter().enumerate() {
                    if k != i {
                        t *= b.values[[j, idx[k]]];
                    }
                }
                *g += t;
            }
        }
        sum += w * f(&point, psi, &grad);
        // odometer increment
        for i in (0..d).rev() {
            idx[i] += 1;
            if idx[i] < sizes[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    sum
}

/// Central finite differences of `loss` with respect to every parameter of
/// every subnetwork, in subnetwork order.
pub fn finite_difference_gradient(model: &TnnModel, step: f64, loss: impl Fn(&TnnModel) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(model.dim());
    let mut work = model.clone();
    for i in 0..model.dim() {
        let theta = model.subnets[i].flat_params();
        let mut g = Vec::with_capacity(theta.len());
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] = theta[k] + step;
            work.subnets[i].set_flat_params(&t).expect("same length");
            let fp = loss(&work);
            t[k] = theta[k] - step;
            work.subnets[i].set_flat_params(&t).expect("same length");
            let fm = loss(&work);
            g.push((fp - fm) / (2.0 * step));
        }
        work.subnets[i].set_flat_params(&theta).expect("same length");
        out.push(g);
    }
    out
}

/// Largest relative discrepancy between two gradients, using
/// `|a - b| / max(|a|, |b|, floor)` per coordinate.
pub fn max_relative_discrepancy(a: &[Vec<f64>], b: &[Vec<f64>], floor: f64) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
