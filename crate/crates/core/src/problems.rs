//! Benchmark problems and their error metrics.

use std::f64::consts::PI;

use ndarray::Array1;

use crate::diffengine::DualBatch;
use crate::error::{Result, TnnError};
use crate::integrals::{
    cross_vector_samples, pair_sum_vectors, CpFunction, Factor, GramSet, LogScaled, SampledCp, SampledFactor,
};
use crate::network::{Boundary, TnnModel};
use crate::quadrature::Grid1D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Smallest eigenpair of `-Δu + vu = λu` with `u = 0` on the boundary.
    EigenDirichlet,
    /// `-Δu + cu = f` with zero normal derivative on the boundary.
    BvpNeumann,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub kind: ProblemKind,
    pub intervals: Vec<(f64, f64)>,
    pub potential: Option<CpFunction>,
    pub rhs: Option<CpFunction>,
    pub reaction: Option<f64>,
    pub exact_eigenvalue: Option<f64>,
    pub exact_solution: Option<CpFunction>,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    /// Boundary decoration the model must carry for this problem.
    pub fn boundary(&self) -> Boundary {
        match self.kind {
            ProblemKind::EigenDirichlet => Boundary::Dirichlet,
            ProblemKind::BvpNeumann => Boundary::None,
        }
    }

    pub fn check_model(&self, model: &TnnModel) -> Result<()> {
        if model.dim() != self.dim() {
            return Err(TnnError::invalid(format!(
                "model dimension {} does not match problem dimension {}",
                model.dim(),
                self.dim()
            )));
        }
        for (i, (net, iv)) in model.subnets.iter().zip(&self.intervals).enumerate() {
            if net.interval != *iv {
                return Err(TnnError::invalid(format!(
                    "subnetwork {i} covers {:?}, problem domain is {:?}",
                    net.interval, iv
                )));
            }
            if net.boundary != self.boundary() {
                return Err(TnnError::invalid(format!(
                    "subnetwork {i} has boundary {:?}, problem needs {:?}",
                    net.boundary,
                    self.boundary()
                )));
            }
        }
        Ok(())
    }
}

fn sin_pi() -> Factor {
    Factor::func_with_derivative("sin(pi x)", |x| (PI * x).sin(), |x| PI * (PI * x).cos())
}

fn gaussian() -> Factor {
    Factor::func_with_derivative("exp(-x^2/2)", |x| (-0.5 * x * x).exp(), |x| -x * (-0.5 * x * x).exp())
}

fn square() -> Factor {
    Factor::func_with_derivative("x^2", |x| x * x, |x| 2.0 * x)
}

/// Rank-`d` function whose term `ℓ` is `make()` in dimension `ℓ` and 1 elsewhere.
fn one_body_sum(d: usize, make: impl Fn() -> Factor) -> Result<CpFunction> {
    let terms = (0..d)
        .map(|l| {
            let mut t = vec![Factor::Const(1.0); d];
            t[l] = make();
            t
        })
        .collect();
    CpFunction::new(d, terms)
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(TnnError::invalid("dimension must be >= 1"));
    }
    Ok(())
}

/// Laplace eigenproblem on `[0,1]^d`: `λ = dπ²`, `u = Π sin(πx_i)`.
pub fn make_laplace(d: usize) -> Result<Problem> {
    check_dim(d)?;
    Ok(Problem {
        name: "laplace".into(),
        kind: ProblemKind::EigenDirichlet,
        intervals: vec![(0.0, 1.0); d],
        potential: None,
        rhs: None,
        reaction: None,
        exact_eigenvalue: Some(d as f64 * PI * PI),
        exact_solution: Some(CpFunction::product((0..d).map(|_| sin_pi()).collect())?),
    })
}

/// Harmonic oscillator `v = Σ x_i²` truncated to `[-t, t]^d`: `λ = d`,
/// `u = Π exp(-x_i²/2)`.
pub fn make_harmonic(d: usize, truncation: f64) -> Result<Problem> {
    check_dim(d)?;
    check_truncation(truncation)?;
    Ok(Problem {
        name: "harmonic".into(),
        kind: ProblemKind::EigenDirichlet,
        intervals: vec![(-truncation, truncation); d],
        potential: Some(one_body_sum(d, square)?),
        rhs: None,
        reaction: None,
        exact_eigenvalue: Some(d as f64),
        exact_solution: Some(CpFunction::product((0..d).map(|_| gaussian()).collect())?),
    })
}

fn check_truncation(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(TnnError::invalid(format!("truncation must be positive, got {t}")));
    }
    Ok(())
}

/// Ground energy of the chain `v = Σ x_i² - Σ x_i x_{i+1}`:
/// `Σ_{i=1..d} √(1 - cos(iπ/(d+1)))`.
pub fn coupled_ground_energy(d: usize) -> f64 {
    (1..=d)
        .map(|i| (1.0 - (i as f64 * PI / (d as f64 + 1.0)).cos()).sqrt())
        .sum()
}

/// Coupled oscillator chain on `[-t, t]^d`. The ground state is a Gaussian
/// with cross terms, which has no finite CP rank, so only the eigenvalue
/// error is available.
pub fn make_coupled(d: usize, truncation: f64) -> Result<Problem> {
    if d < 2 {
        return Err(TnnError::invalid("coupled oscillator needs d >= 2"));
    }
    check_truncation(truncation)?;
    let mut terms = Vec::with_capacity(2 * d - 1);
    for i in 0..d {
        let mut t = vec![Factor::Const(1.0); d];
        t[i] = square();
        terms.push(t);
    }
    for i in 0..d - 1 {
        let mut t = vec![Factor::Const(1.0); d];
        t[i] = Factor::func_with_derivative("-x", |x| -x, |_| -1.0);
        t[i + 1] = Factor::func_with_derivative("x", |x| x, |_| 1.0);
        terms.push(t);
    }
    Ok(Problem {
        name: "coupled".into(),
        kind: ProblemKind::EigenDirichlet,
        intervals: vec![(-truncation, truncation); d],
        potential: Some(CpFunction::new(d, terms)?),
        rhs: None,
        reaction: None,
        exact_eigenvalue: Some(coupled_ground_energy(d)),
        exact_solution: None,
    })
}

/// `-Δu + π²u = 2π² Σ cos(πx_i)` on `[0,1]^d` with Neumann conditions;
/// `u = Σ cos(πx_i)`.
pub fn make_neumann_bvp(d: usize) -> Result<Problem> {
    check_dim(d)?;
    let cos = || Factor::func_with_derivative("cos(pi x)", |x| (PI * x).cos(), |x| -PI * (PI * x).sin());
    let rhs = || {
        Factor::func_with_derivative(
            "2pi^2 cos(pi x)",
            |x| 2.0 * PI * PI * (PI * x).cos(),
            |x| -2.0 * PI * PI * PI * (PI * x).sin(),
        )
    };
    Ok(Problem {
        name: "neumann".into(),
        kind: ProblemKind::BvpNeumann,
        intervals: vec![(0.0, 1.0); d],
        potential: None,
        rhs: Some(one_body_sum(d, rhs)?),
        reaction: Some(PI * PI),
        exact_eigenvalue: None,
        exact_solution: Some(one_body_sum(d, cos)?),
    })
}

pub const PROBLEM_NAMES: [&str; 4] = ["laplace", "harmonic", "coupled", "neumann"];

pub const DEFAULT_TRUNCATION: f64 = 5.0;

/// Catalog lookup by name.
pub fn make_problem(name: &str, d: usize, truncation: f64) -> Result<Problem> {
    match name {
        "laplace" => make_laplace(d),
        "harmonic" => make_harmonic(d, truncation),
        "coupled" => make_coupled(d, truncation),
        "neumann" => make_neumann_bvp(d),
        other => Err(TnnError::invalid(format!(
            "unknown problem {other:?}; expected one of {PROBLEM_NAMES:?}"
        ))),
    }
}

/// `|λ* - λ| / |λ|`.
pub fn error_lambda(estimate: f64, exact: f64) -> Result<f64> {
    if exact == 0.0 {
        return Err(TnnError::invalid("relative eigenvalue error undefined for exact = 0"));
    }
    Ok((estimate - exact).abs() / exact.abs())
}

/// Inner products of a fixed CP function with itself, precomputed once per
/// grid set.
#[derive(Debug, Clone)]
struct SelfPairings {
    l2: LogScaled,
    h1: Option<LogScaled>,
}

fn factor_samples(f: &SampledFactor, n: usize) -> (Vec<f64>, Option<Vec<f64>>) {
    match f {
        SampledFactor::Const(c) => (vec![*c; n], Some(vec![0.0; n])),
        SampledFactor::Nodes { values, derivs } => (values.clone(), derivs.clone()),
    }
}

fn self_pairings(cp: &SampledCp, grids: &[Grid1D]) -> SelfPairings {
    let q = cp.rank();
    let d = cp.dim;
    let mut l2 = LogScaled::ZERO;
    let mut h1 = Some(LogScaled::ZERO);
    for a in 0..q {
        for b in 0..q {
            let mut mass = Vec::with_capacity(d);
            let mut stiff = Vec::with_capacity(d);
            let mut has_deriv = true;
            for (i, grid) in grids.iter().enumerate() {
                let n = grid.len();
                let (va, da) = factor_samples(&cp.terms[a][i], n);
                let (vb, db) = factor_samples(&cp.terms[b][i], n);
                let w = grid.weights();
                mass.push((0..n).map(|k| w[k] * va[k] * vb[k]).sum::<f64>());
                match (da, db) {
                    (Some(da), Some(db)) => stiff.push((0..n).map(|k| w[k] * da[k] * db[k]).sum::<f64>()),
                    _ => has_deriv = false,
                }
            }
            l2 = l2 + LogScaled::product(mass.iter().copied());
            if has_deriv {
                // Σ_i s_i Π_{i'≠i} m_i'
                let mut term = LogScaled::ZERO;
                for i in 0..d {
                    let prod = LogScaled::product((0..d).map(|k| if k == i { stiff[k] } else { mass[k] }));
                    term = term + prod;
                }
                h1 = h1.map(|h| h + term);
            } else {
                h1 = None;
            }
        }
    }
    SelfPairings { l2, h1 }
}

/// `⟨u, Ψ⟩` and `⟨∇u, ∇Ψ⟩` by the separated scheme, normalized consistently
/// with `grams` (log scale `½ Σ ln s_i`).
fn cross_pairings(
    cp: &SampledCp,
    batches: &[DualBatch],
    grids: &[Grid1D],
    grams: &GramSet,
) -> Result<(LogScaled, Option<LogScaled>)> {
    let d = cp.dim;
    let half_log = 0.5 * grams.total_log_scale();
    let mut l2 = 0.0;
    let mut h1 = Some(0.0);
    for term in &cp.terms {
        let mut b = Vec::with_capacity(d);
        let mut c = Vec::with_capacity(d);
        let mut has_deriv = true;
        for i in 0..d {
            let n = grids[i].len();
            let r = &grams.scaling[i];
            let (v, dv) = factor_samples(&term[i], n);
            b.push(cross_vector_samples(&batches[i], &grids[i], &v, false)? * r);
            match dv {
                Some(dv) => c.push(cross_vector_samples(&batches[i], &grids[i], &dv, true)? * r),
                None => has_deriv = false,
            }
        }
        let mut prod = Array1::<f64>::ones(b[0].len());
        for v in &b {
            prod *= v;
        }
        l2 += prod.sum();
        if has_deriv {
            h1 = h1.map(|h| h + pair_sum_vectors(&b, &c));
        } else {
            h1 = None;
        }
    }
    Ok((LogScaled::new(l2, half_log), h1.map(|h| LogScaled::new(h, half_log))))
}

/// Relative errors of one model evaluation; `None` where undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorReport {
    pub e_lambda: Option<f64>,
    pub e_l2: Option<f64>,
    pub e_h1: Option<f64>,
}

/// Everything about the exact solution that does not depend on the model,
/// computed once for a fixed grid set.
#[derive(Debug, Clone)]
pub struct MetricContext {
    kind: ProblemKind,
    exact_eigenvalue: Option<f64>,
    solution: Option<(SampledCp, SelfPairings)>,
    rhs_norms: Option<SelfPairings>,
}

fn projection_error(cross: LogScaled, uu: LogScaled, psi: LogScaled) -> Result<f64> {
    if psi.mantissa.is_nan() || psi.mantissa <= 0.0 || !psi.is_finite() {
        return Err(TnnError::Degenerate("trial function has zero norm".into()));
    }
    let cos2 = (cross * cross).ratio(uu * psi);
    if !cos2.is_finite() {
        return Err(TnnError::numeric("projection error is not finite"));
    }
    Ok((1.0 - cos2).max(0.0).sqrt())
}

impl MetricContext {
    pub fn new(problem: &Problem, grids: &[Grid1D]) -> Result<Self> {
        let solution = match &problem.exact_solution {
            Some(u) => {
                let s = u.sample(grids)?;
                let p = self_pairings(&s, grids);
                if !(p.l2.mantissa > 0.0 && p.l2.is_finite()) {
                    return Err(TnnError::invalid("exact solution vanishes on the quadrature grid"));
                }
                Some((s, p))
            }
            None => None,
        };
        let rhs_norms = match (&problem.kind, &problem.rhs) {
            (ProblemKind::BvpNeumann, Some(f)) => {
                let s = f.sample(grids)?;
                let p = self_pairings(&s, grids);
                if p.l2.mantissa.is_nan() || p.l2.mantissa <= 0.0 || !p.h1.is_some_and(|h| h.mantissa > 0.0) {
                    return Err(TnnError::invalid("right-hand side has zero L2 or H1 norm"));
                }
                Some(p)
            }
            _ => None,
        };
        Ok(MetricContext {
            kind: problem.kind,
            exact_eigenvalue: problem.exact_eigenvalue,
            solution,
            rhs_norms,
        })
    }

    /// Errors of the model whose batches and Grams are given.
    pub fn evaluate(
        &self,
        batches: &[DualBatch],
        grids: &[Grid1D],
        grams: &GramSet,
        eigenvalue_estimate: Option<f64>,
    ) -> Result<ErrorReport> {
        let mut report = ErrorReport::default();
        if let (Some(est), Some(exact)) = (eigenvalue_estimate, self.exact_eigenvalue) {
            report.e_lambda = Some(error_lambda(est, exact)?);
        }
        let Some((u, uu)) = &self.solution else {
            return Ok(report);
        };
        let (cross, cross_h1) = cross_pairings(u, batches, grids, grams)?;
        let scale = grams.total_log_scale();
        let psi2 = LogScaled::new(psi2_mantissa(grams), scale);
        let grad2 = LogScaled::new(grad2_mantissa(grams), scale);
        match self.kind {
            ProblemKind::EigenDirichlet => {
                report.e_l2 = Some(projection_error(cross, uu.l2, psi2)?);
                if let (Some(ch), Some(uh)) = (cross_h1, uu.h1) {
                    report.e_h1 = Some(projection_error(ch, uh, grad2)?);
                }
            }
            ProblemKind::BvpNeumann => {
                let f = self.rhs_norms.as_ref().expect("checked in new");
                let diff_l2 = uu.l2 - cross.scale(2.0) + psi2;
                report.e_l2 = Some((diff_l2.ratio(f.l2)).max(0.0).sqrt());
                if let (Some(ch), Some(uh), Some(fh)) = (cross_h1, uu.h1, f.h1) {
                    let diff_h1 = uh - ch.scale(2.0) + grad2;
                    report.e_h1 = Some((diff_h1.ratio(fh)).max(0.0).sqrt());
                }
            }
        }
        Ok(report)
    }
}

fn psi2_mantissa(grams: &GramSet) -> f64 {
    let mut acc = grams.mass[0].clone();
    for m in &grams.mass[1..] {
        acc *= m;
    }
    acc.sum()
}

fn grad2_mantissa(grams: &GramSet) -> f64 {
    crate::integrals::pair_exclusions(&grams.mass, &grams.stiffness).0
}

fn model_grams(model: &TnnModel, grids: &[Grid1D]) -> Result<(Vec<DualBatch>, GramSet)> {
    let batches = model.evaluate_grid(grids)?;
    let grams = GramSet::assemble(&batches, grids, None, None)?;
    Ok((batches, grams))
}

/// `‖u - 𝒫u‖ / ‖u‖` for the L² projection onto `span{Ψ}`.
pub fn error_l2_projection(model: &TnnModel, grids: &[Grid1D], u: &CpFunction) -> Result<f64> {
    let (batches, grams) = model_grams(model, grids)?;
    let s = u.sample(grids)?;
    let uu = self_pairings(&s, grids);
    let (cross, _) = cross_pairings(&s, &batches, grids, &grams)?;
    let psi2 = LogScaled::new(psi2_mantissa(&grams), grams.total_log_scale());
    projection_error(cross, uu.l2, psi2)
}

/// `|u - 𝒬u|_{H¹} / |u|_{H¹}` for the H¹-seminorm projection onto `span{Ψ}`.
pub fn error_h1_projection(model: &TnnModel, grids: &[Grid1D], u: &CpFunction) -> Result<f64> {
    if !u.has_derivatives() {
        return Err(TnnError::invalid("H1 error needs analytic factor derivatives"));
    }
    let (batches, grams) = model_grams(model, grids)?;
    let s = u.sample(grids)?;
    let uu = self_pairings(&s, grids);
    let (_, cross) = cross_pairings(&s, &batches, grids, &grams)?;
    let grad2 = LogScaled::new(grad2_mantissa(&grams), grams.total_log_scale());
    projection_error(
        cross.expect("derivatives present"),
        uu.h1.expect("derivatives present"),
        grad2,
    )
}

/// `(‖u - Ψ‖ / ‖f‖, |u - Ψ|_{H¹} / |f|_{H¹})`.
pub fn error_bvp(model: &TnnModel, grids: &[Grid1D], u: &CpFunction, f: &CpFunction) -> Result<(f64, f64)> {
    if !u.has_derivatives() || !f.has_derivatives() {
        return Err(TnnError::invalid("BVP errors need analytic factor derivatives"));
    }
    let problem = Problem {
        name: "custom".into(),
        kind: ProblemKind::BvpNeumann,
        intervals: model.intervals(),
        potential: None,
        rhs: Some(f.clone()),
        reaction: None,
        exact_eigenvalue: None,
        exact_solution: Some(u.clone()),
    };
    let ctx = MetricContext::new(&problem, grids)?;
    let (batches, grams) = model_grams(model, grids)?;
    let r = ctx.evaluate(&batches, grids, &grams, None)?;
    Ok((r.e_l2.expect("solution given"), r.e_h1.expect("derivatives given")))
}
