//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The long-running d=4 coupled replication is skipped unless `--include-ignored`
//! (or `--ignored`) is passed, or `TNN_ACCEPTANCE_FULL=1` is set.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tnn_core::config::RunConfig;
use tnn_core::diffengine::ParamGradient;
use tnn_core::integrals::{
    cp_product_integral, integral_cross, integral_grad2, integral_psi2, integral_weighted_psi2, CpFunction, Derivative,
    Factor, FactorSpec, GramSet, DEFAULT_K_MAX,
};
use tnn_core::network::{Activation, ModelSpec, TnnModel};
use tnn_core::oracle::{finite_difference_gradient, full_grid_integral, max_relative_discrepancy};
use tnn_core::problems::{coupled_ground_energy, make_coupled, make_harmonic, make_laplace, make_neumann_bvp, Problem};
use tnn_core::quadrature::{composite_rule, gauss_legendre, Grid1D};
use tnn_core::runner::{run_experiment, RunOutcome, CSV_FILE};
use tnn_core::training::{SampledProblem, StopTargets};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:.3e}"))
}

fn grids_for(problem: &Problem, sub: usize, n: usize) -> Vec<Grid1D> {
    problem
        .intervals
        .iter()
        .map(|&(a, b)| composite_rule(a, b, sub, n).unwrap())
        .collect()
}

fn tiny_model(problem: &Problem, rank: usize, activation: Activation, seed: u64) -> TnnModel {
    let spec = ModelSpec {
        dim: problem.dim(),
        rank,
        depth: 1,
        width: 4,
        activation,
        boundary: problem.boundary(),
        intervals: problem.intervals.clone(),
    };
    TnnModel::init(&spec, seed).unwrap()
}

fn run_config(mut cfg: RunConfig, dir: &Path, targets: StopTargets) -> Result<RunOutcome, String> {
    cfg.output_dir = dir.to_path_buf();
    cfg.targets = targets;
    cfg.log_every = 100;
    run_experiment(&cfg).map_err(|e| e.to_string())
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=20 {
        let (x, w) = gauss_legendre(n).unwrap();
        for k in 0..2 * n {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let want = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            let err = if want == 0.0 { got.abs() } else { rel(got, want) };
            worst = worst.max(err);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-12 && secs < 1.0,
        format!("max error {worst:.2e} over n <= 20, degree <= 2n-1; {secs:.3} s"),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let d = rng.gen_range(2..=3);
        let p = rng.gen_range(1..=3);
        let act = if rng.gen_bool(0.5) {
            Activation::Tanh
        } else {
            Activation::Sine
        };
        let problem = if rng.gen_bool(0.5) {
            make_coupled(d, 2.0).unwrap()
        } else {
            make_harmonic(d, 2.0).unwrap()
        };
        let grids = grids_for(&problem, rng.gen_range(1..=3), rng.gen_range(2..=4));
        let model = tiny_model(&problem, p, act, 100 + case);
        let batches = model.evaluate_grid(&grids).unwrap();
        let v = problem.potential.clone().unwrap();
        let f = CpFunction::product(
            (0..d)
                .map(|i| Factor::func("cos", move |x| (x + i as f64 * 0.3).cos()))
                .collect(),
        )
        .unwrap();
        let sv = v.sample(&grids).unwrap();
        let sf = f.sample(&grids).unwrap();
        let grams = GramSet::assemble(&batches, &grids, Some(&sv), Some(&sf)).unwrap();
        let spec3 = FactorSpec::new(
            vec![Derivative::Partial(0), Derivative::Value, Derivative::Value],
            DEFAULT_K_MAX,
        )
        .unwrap();
        let pairs = [
            (
                integral_psi2(&grams).unwrap().value(),
                full_grid_integral(&batches, &grids, |_, psi, _| psi * psi),
            ),
            (
                integral_grad2(&grams).unwrap().value(),
                full_grid_integral(&batches, &grids, |_, _, g| g.iter().map(|v| v * v).sum()),
            ),
            (
                integral_weighted_psi2(&grams, &sv).unwrap().value(),
                full_grid_integral(&batches, &grids, |x, psi, _| v.evaluate(x) * psi * psi),
            ),
            (
                integral_cross(&grams).unwrap().value(),
                full_grid_integral(&batches, &grids, |x, psi, _| f.evaluate(x) * psi),
            ),
            (
                cp_product_integral(&batches, &grids, &f, &spec3).unwrap().value(),
                full_grid_integral(&batches, &grids, |x, psi, g| f.evaluate(x) * g[0] * psi * psi),
            ),
        ];
        for (got, want) in pairs {
            worst = worst.max(rel(got, want));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-10 && secs < 30.0,
        format!("50 cases, max relative error {worst:.2e}; {secs:.2} s"),
    )
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let problems = [
        make_laplace(2).unwrap(),
        make_harmonic(2, 5.0).unwrap(),
        make_coupled(2, 5.0).unwrap(),
        make_neumann_bvp(2).unwrap(),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for problem in &problems {
        let grids = grids_for(problem, 4, 6);
        let model = tiny_model(problem, 2, Activation::Tanh, 5);
        let sampled = SampledProblem::new(problem, &grids).unwrap();
        let eval = sampled.loss_and_grad(&model, &grids).unwrap();
        let analytic: Vec<Vec<f64>> = eval.gradient.iter().map(ParamGradient::flatten).collect();
        let fd = finite_difference_gradient(&model, 1e-5, |m| sampled.loss_and_grad(m, &grids).unwrap().report.loss);
        let scale = analytic.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let worst = max_relative_discrepancy(&analytic, &fd, 1e-3 * scale);
        ok &= worst <= 1e-5;
        parts.push(format!("{} {worst:.1e}", problem.name));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(ok && secs < 60.0, format!("{}; {secs:.2} s", parts.join(", ")))
}

fn criterion_4() -> Verdict {
    let dims = [64usize, 128, 256, 512];
    let mut times = Vec::new();
    for &d in &dims {
        let problem = make_laplace(d).unwrap();
        let grids = grids_for(&problem, 50, 4);
        let spec = ModelSpec {
            dim: d,
            rank: 10,
            depth: 2,
            width: 20,
            activation: Activation::Tanh,
            boundary: problem.boundary(),
            intervals: problem.intervals.clone(),
        };
        let model = TnnModel::init(&spec, 0).unwrap();
        let sampled = SampledProblem::new(&problem, &grids).unwrap();
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            let eval = sampled.loss_and_grad(&model, &grids);
            best = best.min(t.elapsed().as_secs_f64());
            if let Err(e) = eval {
                return Verdict::Fail(format!("d={d}: {e}"));
            }
        }
        times.push(best);
    }
    // least-squares slope of log t against log d
    let xs: Vec<f64> = dims.iter().map(|&d| (d as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let t512 = times[3];
    let listing: Vec<String> = dims.iter().zip(&times).map(|(d, t)| format!("d={d} {t:.3}s")).collect();
    verdict(
        slope < 2.0 && t512 < 10.0,
        format!("{}; log-log slope {slope:.2}", listing.join(", ")),
    )
}

fn criterion_5() -> Vec<(String, Verdict)> {
    let mut out = Vec::new();
    let dir = tempfile::tempdir().unwrap();

    let t = Instant::now();
    let mut cfg = RunConfig::defaults_for("laplace", 3).unwrap();
    cfg.epochs = 20_000;
    cfg.optimizer.segments = vec![(20_000, 0.003)];
    let targets = StopTargets {
        e_lambda: Some(1e-5),
        ..Default::default()
    };
    let v = match run_config(cfg, &dir.path().join("ci"), targets) {
        Ok(o) => {
            let secs = t.elapsed().as_secs_f64();
            let best = o.summary.best.e_lambda;
            verdict(
                best.is_some_and(|e| e <= 1e-5) && secs < 600.0,
                format!(
                    "d=3: best e_lambda {} after {} epochs; {secs:.0} s",
                    fmt_opt(best),
                    o.summary.epochs_run
                ),
            )
        }
        Err(e) => Verdict::Fail(e),
    };
    out.push(("5 (reduced gate)".to_string(), v));

    let t = Instant::now();
    let targets = StopTargets {
        e_lambda: Some(1e-6),
        e_l2: Some(1e-3),
        e_h1: Some(1e-3),
    };
    let v = match run_config(
        RunConfig::defaults_for("laplace", 5).unwrap(),
        &dir.path().join("full"),
        targets,
    ) {
        Ok(o) => {
            let b = &o.summary.best;
            verdict(
                b.e_lambda.is_some_and(|e| e <= 1e-6)
                    && b.e_l2.is_some_and(|e| e <= 1e-3)
                    && b.e_h1.is_some_and(|e| e <= 1e-3),
                format!(
                    "d=5: best e_lambda {} e_l2 {} e_h1 {} after {} epochs; {:.0} s",
                    fmt_opt(b.e_lambda),
                    fmt_opt(b.e_l2),
                    fmt_opt(b.e_h1),
                    o.summary.epochs_run,
                    t.elapsed().as_secs_f64()
                ),
            )
        }
        Err(e) => Verdict::Fail(e),
    };
    out.push(("5 (d=5 replication)".to_string(), v));
    out
}

fn criterion_6() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let targets = StopTargets {
        e_lambda: Some(1e-5),
        ..Default::default()
    };
    match run_config(RunConfig::defaults_for("harmonic", 5).unwrap(), dir.path(), targets) {
        Ok(o) => {
            let best = o.summary.best.e_lambda;
            verdict(
                best.is_some_and(|e| e <= 1e-5),
                format!(
                    "d=5: best e_lambda {} after {} epochs; {:.0} s",
                    fmt_opt(best),
                    o.summary.epochs_run,
                    t.elapsed().as_secs_f64()
                ),
            )
        }
        Err(e) => Verdict::Fail(e),
    }
}

fn criterion_7(full: bool) -> Vec<(String, Verdict)> {
    let mut out = Vec::new();
    let dir = tempfile::tempdir().unwrap();

    let t = Instant::now();
    let mut cfg = RunConfig::defaults_for("coupled", 2).unwrap();
    cfg.model.rank = 10;
    cfg.quadrature.subintervals = 50;
    cfg.quadrature.points_per_subinterval = 8;
    cfg.epochs = 100_000;
    cfg.optimizer.segments = vec![(100_000, 0.003)];
    let targets = StopTargets {
        e_lambda: Some(1e-5),
        ..Default::default()
    };
    let exact =
        (1.0 - (std::f64::consts::PI / 3.0).cos()).sqrt() + (1.0 - (2.0 * std::f64::consts::PI / 3.0).cos()).sqrt();
    let v = match run_config(cfg, &dir.path().join("ci"), targets) {
        Ok(o) => {
            let secs = t.elapsed().as_secs_f64();
            let best = o.summary.best.e_lambda;
            let same = o.summary.exact_eigenvalue.is_some_and(|l| rel(l, exact) < 1e-14);
            verdict(
                same && best.is_some_and(|e| e <= 1e-5) && secs < 900.0,
                format!(
                    "d=2 (exact {exact:.12}): best e_lambda {} after {} epochs; {secs:.0} s",
                    fmt_opt(best),
                    o.summary.epochs_run
                ),
            )
        }
        Err(e) => Verdict::Fail(e),
    };
    out.push(("7 (d=2 proxy)".to_string(), v));

    let v = if full {
        let base = RunConfig::defaults_for("coupled", 4).unwrap();
        let exact4 = coupled_ground_energy(4);
        let mut bests = Vec::new();
        let mut err = None;
        for p in [1usize, 20] {
            let mut cfg = base.clone();
            cfg.model.rank = p;
            // p=1 plateaus, so only the p=20 run may stop at its target
            let targets = StopTargets {
                e_lambda: (p == 20).then_some(1e-4),
                ..Default::default()
            };
            match run_config(cfg, &dir.path().join(format!("p{p}")), targets) {
                Ok(o) => bests.push(o.summary.best.e_lambda),
                Err(e) => err = Some(format!("p={p}: {e}")),
            }
        }
        match (err, bests.as_slice()) {
            (Some(e), _) => Verdict::Fail(e),
            (None, [Some(e1), Some(e20)]) => verdict(
                *e20 <= 1e-4 && *e20 * 10.0 <= *e1,
                format!("d=4 (exact {exact4:.12}): best e_lambda p=1 {e1:.3e}, p=20 {e20:.3e}"),
            ),
            _ => Verdict::Fail("missing e_lambda".into()),
        }
    } else {
        Verdict::Skip("d=4, 500 000-epoch rank comparison runs with --include-ignored".into())
    };
    out.push(("7 (d=4 replication)".to_string(), v));
    out
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let targets = StopTargets {
        e_l2: Some(1e-3),
        e_h1: Some(5e-3),
        ..Default::default()
    };
    match run_config(RunConfig::defaults_for("neumann", 5).unwrap(), dir.path(), targets) {
        Ok(o) => {
            let b = &o.summary.best;
            verdict(
                b.e_l2.is_some_and(|e| e <= 1e-3) && b.e_h1.is_some_and(|e| e <= 5e-3),
                format!(
                    "d=5: best e_l2 {} e_h1 {} after {} epochs; {:.0} s",
                    fmt_opt(b.e_l2),
                    fmt_opt(b.e_h1),
                    o.summary.epochs_run,
                    t.elapsed().as_secs_f64()
                ),
            )
        }
        Err(e) => Verdict::Fail(e),
    }
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let mut cfg = RunConfig::defaults_for("laplace", 128).unwrap();
    cfg.epochs = 5000;
    cfg.optimizer.segments = vec![(5000, 1e-4)];
    match run_config(cfg, dir.path(), StopTargets::default()) {
        Ok(o) => {
            let rows = &o.record.rows;
            let finite = rows
                .iter()
                .all(|r| r.loss.is_finite() && r.e_lambda.is_some_and(f64::is_finite));
            let mut running = f64::INFINITY;
            let mut monotone = true;
            for r in rows {
                let next = running.min(r.e_lambda.unwrap_or(f64::INFINITY));
                monotone &= next <= running;
                running = next;
            }
            let best = o.summary.best.e_lambda;
            verdict(
                o.summary.epochs_run == 5000 && finite && monotone && best.is_some_and(|e| e <= 1e-2),
                format!(
                    "d=128: {} epochs, {} logged rows finite={finite}, best e_lambda {}; {:.0} s",
                    o.summary.epochs_run,
                    rows.len(),
                    fmt_opt(best),
                    t.elapsed().as_secs_f64()
                ),
            )
        }
        Err(e) => Verdict::Fail(e),
    }
}

fn csv_without_timing(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join(CSV_FILE)).unwrap();
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_10() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::defaults_for("harmonic", 3).unwrap();
    cfg.model.rank = 4;
    cfg.model.width = 16;
    cfg.quadrature.subintervals = 20;
    cfg.quadrature.points_per_subinterval = 8;
    cfg.epochs = 300;
    cfg.optimizer.segments = vec![(300, 0.01)];
    cfg.log_every = 10;
    let mut csvs = Vec::new();
    for (k, threads) in [1usize, 1, 2, 4].into_iter().enumerate() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut c = cfg.clone();
        c.output_dir = dir.path().join(format!("run{k}"));
        if let Err(e) = pool.install(|| run_experiment(&c)) {
            return Verdict::Fail(e.to_string());
        }
        csvs.push(csv_without_timing(&c.output_dir));
    }
    let identical = csvs.iter().all(|c| *c == csvs[0]);
    verdict(
        identical && csvs[0].lines().count() == 32,
        format!(
            "4 runs (threads 1, 1, 2, 4), {} CSV lines, identical={identical}",
            csvs[0].lines().count()
        ),
    )
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let full = args.iter().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("TNN_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    // positional arguments select criteria by number
    let only: Vec<&str> = args
        .iter()
        .filter(|a| !a.starts_with('-'))
        .map(String::as_str)
        .collect();
    let selected = |id: &str| only.is_empty() || only.contains(&id);

    let mut failed = 0;
    let mut report = |name: &str, v: Verdict| {
        let line = match v {
            Verdict::Pass(d) => format!("PASS criterion {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                format!("FAIL criterion {name}: {d}")
            }
            Verdict::Skip(d) => format!("SKIP criterion {name}: {d}"),
        };
        println!("{line}");
    };

    type Single = fn() -> Verdict;
    let singles: [(&str, Single); 8] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("6", criterion_6),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
    ];
    for id in ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"] {
        if !selected(id) {
            continue;
        }
        match id {
            "5" => criterion_5().into_iter().for_each(|(name, v)| report(&name, v)),
            "7" => criterion_7(full).into_iter().for_each(|(name, v)| report(&name, v)),
            _ => {
                let f = singles.iter().find(|s| s.0 == id).expect("listed").1;
                report(id, f());
            }
        }
    }

    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all run criteria passed");
        ExitCode::SUCCESS
    }
}
