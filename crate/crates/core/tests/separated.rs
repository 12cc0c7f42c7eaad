//! Separated integrals of a hand-built rank-one trial function.

use std::f64::consts::PI;

use ndarray::Array2;

use tnn_core::diffengine::DualBatch;
use tnn_core::integrals::{integral_grad2, integral_psi2, GramSet, SeparatedTerms};
use tnn_core::quadrature::{composite_rule, Grid1D};

fn sine_batch(grid: &Grid1D) -> DualBatch {
    let n = grid.len();
    let values = Array2::from_shape_fn((1, n), |(_, k)| (PI * grid.nodes()[k]).sin());
    let dvalues = Array2::from_shape_fn((1, n), |(_, k)| PI * (PI * grid.nodes()[k]).cos());
    DualBatch { values, dvalues }
}

#[test]
fn rank_one_sine_rayleigh_quotient_is_exact() {
    let d = 3;
    let grids: Vec<Grid1D> = (0..d).map(|_| composite_rule(0.0, 1.0, 10, 16).unwrap()).collect();
    let batches: Vec<DualBatch> = grids.iter().map(sine_batch).collect();
    let grams = GramSet::assemble(&batches, &grids, None, None).unwrap();
    let terms = SeparatedTerms::evaluate(&grams, None).unwrap();
    let rayleigh = (terms.grad2 + terms.potential) / terms.psi2;
    assert!((rayleigh - 3.0 * PI * PI).abs() <= 1e-8, "{rayleigh}");

    let psi2 = integral_psi2(&grams).unwrap().value();
    assert!((psi2 - 0.125).abs() < 1e-14, "{psi2}");
    let grad2 = integral_grad2(&grams).unwrap().value();
    assert!((grad2 - 3.0 * PI * PI / 8.0).abs() < 1e-12, "{grad2}");
}

#[test]
fn scaled_copies_give_the_same_quotient() {
    // Ψ = 0.3·u + 2·u is still a multiple of u.
    let d = 4;
    let grids: Vec<Grid1D> = (0..d).map(|_| composite_rule(0.0, 1.0, 4, 12).unwrap()).collect();
    let batches: Vec<DualBatch> = grids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let b = sine_batch(g);
            let s = if i == 0 { [0.3, 2.0] } else { [1.0, 1.0] };
            let stack = |a: &Array2<f64>| Array2::from_shape_fn((2, g.len()), |(j, k)| s[j] * a[[0, k]]);
            DualBatch {
                values: stack(&b.values),
                dvalues: stack(&b.dvalues),
            }
        })
        .collect();
    let grams = GramSet::assemble(&batches, &grids, None, None).unwrap();
    let terms = SeparatedTerms::evaluate(&grams, None).unwrap();
    let rayleigh = terms.grad2 / terms.psi2;
    assert!((rayleigh - 4.0 * PI * PI).abs() <= 1e-8, "{rayleigh}");
}
