//! Self-checks behind `tnn check`: quadrature exactness, separated
//! integration against the full tensor grid, analytic against
//! finite-difference gradients, checkpoint round trip and determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffengine::ParamGradient;
use crate::integrals::{
    integral_cross, integral_grad2, integral_psi2, integral_weighted_psi2, CpFunction, Factor, GramSet,
};
use crate::network::{Activation, ModelSpec, TnnModel};
use crate::oracle::{finite_difference_gradient, full_grid_integral, max_relative_discrepancy};
use crate::problems::{make_coupled, make_harmonic, make_laplace, make_neumann_bvp, Problem};
use crate::quadrature::{composite_rule, gauss_legendre, Grid1D};
use crate::training::{train, OptimizerKind, SampledProblem, Schedule};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn quadrature_exactness() -> CheckResult {
    let mut worst = 0.0f64;
    for n in 1..=20 {
        let (x, w) = match gauss_legendre(n) {
            Ok(r) => r,
            Err(e) => return result("quadrature exactness", false, e.to_string()),
        };
        for k in 0..2 * n {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let want = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    result(
        "quadrature exactness",
        worst <= 1e-12,
        format!("max error {worst:.2e}, n <= 20"),
    )
}

fn small_model(problem: &Problem, rank: usize, seed: u64) -> TnnModel {
    let spec = ModelSpec {
        dim: problem.dim(),
        rank,
        depth: 1,
        width: 4,
        activation: Activation::Tanh,
        boundary: problem.boundary(),
        intervals: problem.intervals.clone(),
    };
    TnnModel::init(&spec, seed).expect("valid spec")
}

fn grids_for(problem: &Problem, sub: usize, n: usize) -> Vec<Grid1D> {
    problem
        .intervals
        .iter()
        .map(|&(a, b)| composite_rule(a, b, sub, n).expect("valid rule"))
        .collect()
}

fn separated_vs_full_grid() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let d = rng.gen_range(2..=3);
        let p = rng.gen_range(1..=3);
        let problem = make_coupled(d, 2.0).expect("d >= 2");
        let grids = grids_for(&problem, 2, 3);
        let model = small_model(&problem, p, case);
        let batches = model.evaluate_grid(&grids).expect("aligned grids");
        let v = problem.potential.clone().expect("coupled has a potential");
        let f = CpFunction::product((0..d).map(|_| Factor::func("cos", f64::cos)).collect()).expect("rank 1");
        let (sv, sf) = (v.sample(&grids).expect("grids"), f.sample(&grids).expect("grids"));
        let grams = GramSet::assemble(&batches, &grids, Some(&sv), Some(&sf)).expect("non-degenerate");
        let pairs = [
            (
                integral_psi2(&grams).map(|v| v.value()),
                full_grid_integral(&batches, &grids, |_, psi, _| psi * psi),
            ),
            (
                integral_grad2(&grams).map(|v| v.value()),
                full_grid_integral(&batches, &grids, |_, _, g| g.iter().map(|v| v * v).sum()),
            ),
            (
                integral_weighted_psi2(&grams, &sv).map(|v| v.value()),
                full_grid_integral(&batches, &grids, |x, psi, _| v.evaluate(x) * psi * psi),
            ),
            (
                integral_cross(&grams).map(|v| v.value()),
                full_grid_integral(&batches, &grids, |x, psi, _| f.evaluate(x) * psi),
            ),
        ];
        for (got, want) in pairs {
            match got {
                Ok(g) => worst = worst.max(rel(g, want)),
                Err(e) => return result("separated integrals", false, e.to_string()),
            }
        }
    }
    result(
        "separated integrals",
        worst <= 1e-10,
        format!("max relative error {worst:.2e}"),
    )
}

fn gradient_checks() -> CheckResult {
    let problems = [
        make_laplace(2),
        make_harmonic(2, 5.0),
        make_coupled(2, 5.0),
        make_neumann_bvp(2),
    ];
    let mut worst = 0.0f64;
    for problem in problems {
        let problem = problem.expect("catalog");
        let grids = grids_for(&problem, 4, 6);
        let model = small_model(&problem, 2, 5);
        let sampled = match SampledProblem::new(&problem, &grids) {
            Ok(s) => s,
            Err(e) => return result("gradients", false, e.to_string()),
        };
        let eval = match sampled.loss_and_grad(&model, &grids) {
            Ok(e) => e,
            Err(e) => return result("gradients", false, e.to_string()),
        };
        let analytic: Vec<Vec<f64>> = eval.gradient.iter().map(ParamGradient::flatten).collect();
        let fd = finite_difference_gradient(&model, 1e-5, |m| {
            sampled.loss_and_grad(m, &grids).map_or(f64::NAN, |e| e.report.loss)
        });
        let scale = analytic.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(max_relative_discrepancy(&analytic, &fd, 1e-3 * scale));
    }
    result(
        "gradients",
        worst <= 1e-5,
        format!("max relative discrepancy {worst:.2e}"),
    )
}

fn checkpoint_round_trip() -> CheckResult {
    let problem = make_laplace(3).expect("catalog");
    let model = small_model(&problem, 3, 8);
    let path = std::env::temp_dir().join(format!("tnn-check-{}.json", std::process::id()));
    let outcome = model.save(&path).and_then(|_| TnnModel::load(&path));
    let _ = std::fs::remove_file(&path);
    match outcome {
        Ok(back) => result("checkpoint round trip", back == model, "bit-exact parameters".into()),
        Err(e) => result("checkpoint round trip", false, e.to_string()),
    }
}

fn determinism() -> CheckResult {
    let problem = make_harmonic(2, 5.0).expect("catalog");
    let grids = grids_for(&problem, 10, 4);
    let schedule = Schedule::constant(20, 0.01, OptimizerKind::Adam, 5);
    let run = || {
        let mut m = small_model(&problem, 2, 3);
        train(&mut m, &problem, &grids, &schedule).map(|r| r.rows.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>())
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => result("determinism", a == b, format!("{} logged rows", a.len())),
        (Err(e), _) | (_, Err(e)) => result("determinism", false, e.to_string()),
    }
}

/// Runs every self-check.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        quadrature_exactness(),
        separated_vs_full_grid(),
        gradient_checks(),
        checkpoint_round_trip(),
        determinism(),
    ]
}
