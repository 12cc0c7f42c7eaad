//! Losses, analytic gradients, optimizers and the training loop.
//!
//! Every loss evaluation runs the same pipeline: one recorded forward pass
//! per dimension, Gram assembly, the separated integrals, their cotangents,
//! the Gram pullback to each dimension's dual batch, and one reverse pass per
//! subnetwork. Nothing depends on more than one dimension at a time except
//! the `O(d·p²)` Hadamard reductions.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::{backward_with_tape, forward_recorded, DualBatch, ParamGradient, Tape};
use crate::error::{Result, TnnError};
use crate::integrals::{pullback_to_batches, GramSet, LogScaled, SampledCp, SeparatedTerms};
use crate::network::TnnModel;
use crate::problems::{ErrorReport, MetricContext, Problem, ProblemKind};
use crate::quadrature::Grid1D;

/// Below this ratio of `∫Ψ²` to the sum of squared rank-term norms the
/// trial function is treated as having cancelled to zero.
pub const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub eigenvalue_estimate: Option<f64>,
    pub numerator: LogScaled,
    pub denominator: LogScaled,
}

/// Everything produced by one loss evaluation; the batches and Grams are
/// kept so metrics can be computed without another forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: LossReport,
    pub gradient: Vec<ParamGradient>,
    pub batches: Vec<DualBatch>,
    pub grams: GramSet,
}

fn forward_all(model: &TnnModel, grids: &[Grid1D]) -> Result<(Vec<DualBatch>, Vec<Tape>)> {
    if grids.len() != model.dim() {
        return Err(TnnError::invalid(format!(
            "{} grids for a {}-dimensional model",
            grids.len(),
            model.dim()
        )));
    }
    for (i, (net, g)) in model.subnets.iter().zip(grids).enumerate() {
        if net.interval != g.interval() {
            return Err(TnnError::invalid(format!(
                "grid {i} covers {:?}, subnetwork covers {:?}",
                g.interval(),
                net.interval
            )));
        }
    }
    let out: Vec<(DualBatch, Tape)> = model
        .subnets
        .par_iter()
        .zip(grids.par_iter())
        .enumerate()
        .map(|(i, (net, g))| {
            forward_recorded(net, g.nodes()).map_err(|e| TnnError::Numeric(format!("subnetwork {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

fn backward_all(model: &TnnModel, tapes: &[Tape], cots: &[(Array2<f64>, Array2<f64>)]) -> Result<Vec<ParamGradient>> {
    model
        .subnets
        .par_iter()
        .zip(tapes.par_iter())
        .zip(cots.par_iter())
        .map(|((net, tape), (cv, cd))| backward_with_tape(net, tape, cv, cd))
        .collect()
}

/// `ln Σ_j Π_i M̃_i[j,j]`: the squared norm of `Ψ` if its rank terms did not
/// interfere.
fn ln_diagonal_mass(grams: &GramSet) -> f64 {
    let p = grams.rank();
    let mut acc = LogScaled::ZERO;
    for j in 0..p {
        acc = acc + LogScaled::product(grams.mass.iter().map(|m| m[[j, j]]));
    }
    acc.ln_abs()
}

fn check_denominator(terms: &SeparatedTerms, grams: &GramSet) -> Result<()> {
    let d = terms.psi2;
    let reference = ln_diagonal_mass(grams);
    if d.is_nan() || d <= 0.0 || !reference.is_finite() || d.ln() < reference + DEGENERATE_RATIO.ln() {
        return Err(TnnError::Degenerate(format!(
            "trial function collapsed: normalized ∫Ψ² = {d:e}"
        )));
    }
    Ok(())
}

/// Rayleigh quotient `(∫|∇Ψ|² + ∫vΨ²) / ∫Ψ²` and its parameter gradient.
pub fn rayleigh_loss_and_grad(model: &TnnModel, grids: &[Grid1D], potential: Option<&SampledCp>) -> Result<Evaluation> {
    let (batches, tapes) = forward_all(model, grids)?;
    let grams = GramSet::assemble(&batches, grids, potential, None)?;
    let terms = SeparatedTerms::evaluate(&grams, potential)?;
    check_denominator(&terms, &grams)?;
    let num = terms.grad2 + terms.potential;
    let den = terms.psi2;
    let lambda = num / den;
    if !lambda.is_finite() {
        return Err(TnnError::numeric("Rayleigh quotient is not finite"));
    }
    let cot = terms.cotangent(&grams, -lambda / den, 1.0 / den, 1.0 / den, 0.0);
    let cots = pullback_to_batches(&batches, grids, &grams, &cot, potential, None)?;
    let gradient = backward_all(model, &tapes, &cots)?;
    let report = LossReport {
        loss: lambda,
        eigenvalue_estimate: Some(lambda),
        numerator: LogScaled::new(num, terms.log_scale),
        denominator: LogScaled::new(den, terms.log_scale),
    };
    Ok(Evaluation {
        report,
        gradient,
        batches,
        grams,
    })
}

/// Ritz energy `½∫|∇Ψ|² + ½c∫Ψ² - ∫fΨ` and its parameter gradient.
pub fn ritz_loss_and_grad(model: &TnnModel, grids: &[Grid1D], rhs: &SampledCp, reaction: f64) -> Result<Evaluation> {
    let (batches, tapes) = forward_all(model, grids)?;
    let grams = GramSet::assemble(&batches, grids, None, Some(rhs))?;
    let terms = SeparatedTerms::evaluate(&grams, None)?;
    let big = terms.log_scale.exp();
    let half = (0.5 * terms.log_scale).exp();
    if !(big.is_finite() && big > 0.0) {
        return Err(TnnError::numeric(format!(
            "Gram scale exp({}) is outside the double range",
            terms.log_scale
        )));
    }
    let quadratic = 0.5 * big * (terms.grad2 + reaction * terms.psi2);
    let linear = half * terms.cross;
    let loss = quadratic - linear;
    if !loss.is_finite() {
        return Err(TnnError::numeric("Ritz energy is not finite"));
    }
    let cot = terms.cotangent(&grams, 0.5 * big * reaction, 0.5 * big, 0.0, -half);
    let cots = pullback_to_batches(&batches, grids, &grams, &cot, None, Some(rhs))?;
    let gradient = backward_all(model, &tapes, &cots)?;
    let report = LossReport {
        loss,
        eigenvalue_estimate: None,
        numerator: LogScaled::from_value(loss),
        denominator: LogScaled::ONE,
    };
    Ok(Evaluation {
        report,
        gradient,
        batches,
        grams,
    })
}

/// Problem data sampled once on the fixed training grids.
#[derive(Debug, Clone)]
pub struct SampledProblem {
    pub kind: ProblemKind,
    pub potential: Option<SampledCp>,
    pub rhs: Option<SampledCp>,
    pub reaction: f64,
}

impl SampledProblem {
    pub fn new(problem: &Problem, grids: &[Grid1D]) -> Result<Self> {
        if grids.len() != problem.dim() {
            return Err(TnnError::invalid(format!(
                "{} grids for a {}-dimensional problem",
                grids.len(),
                problem.dim()
            )));
        }
        let potential = problem.potential.as_ref().map(|v| v.sample(grids)).transpose()?;
        let rhs = problem.rhs.as_ref().map(|f| f.sample(grids)).transpose()?;
        if problem.kind == ProblemKind::BvpNeumann && rhs.is_none() {
            return Err(TnnError::invalid("boundary-value problem without right-hand side"));
        }
        Ok(SampledProblem {
            kind: problem.kind,
            potential,
            rhs,
            reaction: problem.reaction.unwrap_or(0.0),
        })
    }

    pub fn loss_and_grad(&self, model: &TnnModel, grids: &[Grid1D]) -> Result<Evaluation> {
        match self.kind {
            ProblemKind::EigenDirichlet => rayleigh_loss_and_grad(model, grids, self.potential.as_ref()),
            ProblemKind::BvpNeumann => {
                ritz_loss_and_grad(model, grids, self.rhs.as_ref().expect("checked in new"), self.reaction)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<ParamGradient>,
    second: Vec<ParamGradient>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &TnnModel) -> Result<Self> {
        check_learning_rate(learning_rate)?;
        let zeros: Vec<ParamGradient> = model.subnets.iter().map(ParamGradient::zeros_like).collect();
        let (first, second) = match kind {
            OptimizerKind::Adam => (zeros.clone(), zeros),
            OptimizerKind::Gd => (Vec::new(), Vec::new()),
        };
        Ok(OptimizerState {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first,
            second,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        check_learning_rate(lr)?;
        self.learning_rate = lr;
        Ok(())
    }

    /// Applies one update in place. The model is untouched if any gradient
    /// entry is non-finite.
    pub fn step(&mut self, model: &mut TnnModel, grads: &[ParamGradient]) -> Result<()> {
        if grads.len() != model.dim() {
            return Err(TnnError::invalid(format!(
                "{} gradients for {} subnetworks",
                grads.len(),
                model.dim()
            )));
        }
        for (i, (g, net)) in grads.iter().zip(&model.subnets).enumerate() {
            if !g.is_congruent(net) {
                return Err(TnnError::invalid(format!(
                    "gradient {i} does not match subnetwork shape"
                )));
            }
            for (l, lg) in g.layers.iter().enumerate() {
                if lg.weight.iter().chain(lg.bias.iter()).any(|v| !v.is_finite()) {
                    return Err(TnnError::numeric(format!(
                        "non-finite gradient in subnetwork {i}, layer {l}"
                    )));
                }
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Gd => {
                for (net, g) in model.subnets.iter_mut().zip(grads) {
                    for (layer, lg) in net.layers.iter_mut().zip(&g.layers) {
                        layer.weight.scaled_add(-lr, &lg.weight);
                        layer.bias.scaled_add(-lr, &lg.bias);
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = (1.0 - b2.powi(t)).sqrt();
                let step_size = lr / c1;
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step_size * *m / (v.sqrt() / c2 + eps);
                };
                for (((net, g), m), v) in model
                    .subnets
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((layer, lg), lm), lv) in net
                        .layers
                        .iter_mut()
                        .zip(&g.layers)
                        .zip(&mut m.layers)
                        .zip(&mut v.layers)
                    {
                        ndarray::Zip::from(&mut layer.weight)
                            .and(&mut lm.weight)
                            .and(&mut lv.weight)
                            .and(&lg.weight)
                            .for_each(|p, m, v, &g| update(p, m, v, g));
                        ndarray::Zip::from(&mut layer.bias)
                            .and(&mut lm.bias)
                            .and(&mut lv.bias)
                            .and(&lg.bias)
                            .for_each(|p, m, v, &g| update(p, m, v, g));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_learning_rate(lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(TnnError::invalid(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

/// Stop as soon as every set target is met by the best value so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StopTargets {
    pub e_lambda: Option<f64>,
    pub e_l2: Option<f64>,
    pub e_h1: Option<f64>,
}

impl StopTargets {
    pub fn is_empty(&self) -> bool {
        self.e_lambda.is_none() && self.e_l2.is_none() && self.e_h1.is_none()
    }

    fn met(&self, best: &ErrorReport) -> bool {
        if self.is_empty() {
            return false;
        }
        let ok = |target: Option<f64>, got: Option<f64>| match target {
            None => true,
            Some(t) => got.is_some_and(|g| g <= t),
        };
        ok(self.e_lambda, best.e_lambda) && ok(self.e_l2, best.e_l2) && ok(self.e_h1, best.e_h1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `(epochs, learning rate)` segments run in order.
    pub segments: Vec<(usize, f64)>,
    pub optimizer: OptimizerKind,
    pub log_every: usize,
    pub targets: StopTargets,
}

impl Schedule {
    pub fn constant(epochs: usize, lr: f64, optimizer: OptimizerKind, log_every: usize) -> Self {
        Schedule {
            segments: vec![(epochs, lr)],
            optimizer,
            log_every,
            targets: StopTargets::default(),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.segments.iter().map(|s| s.0).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_every == 0 {
            return Err(TnnError::invalid("log_every must be >= 1"));
        }
        for &(_, lr) in &self.segments {
            check_learning_rate(lr)?;
        }
        Ok(())
    }
}

/// One logged epoch. Metrics describe the parameters after `epoch` updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub lambda_estimate: Option<f64>,
    pub e_lambda: Option<f64>,
    pub e_l2: Option<f64>,
    pub e_h1: Option<f64>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub rows: Vec<LogRow>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Minimum of each logged metric over the run.
    pub best: ErrorReport,
    pub final_loss: f64,
    pub final_lambda: Option<f64>,
    /// Number of subnetwork input points evaluated over the run.
    pub node_evaluations: u64,
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Full-batch training on the fixed grids. Deterministic for a given model,
/// problem, grids and schedule.
pub fn train(model: &mut TnnModel, problem: &Problem, grids: &[Grid1D], schedule: &Schedule) -> Result<TrainRecord> {
    train_with_observer(model, problem, grids, schedule, |_| {})
}

/// [`train`] with a callback on every logged row.
pub fn train_with_observer(
    model: &mut TnnModel,
    problem: &Problem,
    grids: &[Grid1D],
    schedule: &Schedule,
    mut observe: impl FnMut(&LogRow),
) -> Result<TrainRecord> {
    schedule.validate()?;
    problem.check_model(model)?;
    let sampled = SampledProblem::new(problem, grids)?;
    let metrics = MetricContext::new(problem, grids)?;
    let total = schedule.total_epochs();
    let points_per_eval: u64 = grids.iter().map(|g| g.len() as u64).sum();
    let first_lr = schedule.segments.first().map_or(1e-3, |s| s.1);
    let mut opt = OptimizerState::new(schedule.optimizer, first_lr, model)?;
    let start = Instant::now();

    let mut record = TrainRecord {
        rows: Vec::new(),
        epochs_run: 0,
        stopped_early: false,
        best: ErrorReport::default(),
        final_loss: f64::NAN,
        final_lambda: None,
        node_evaluations: 0,
    };
    let mut segment = 0;
    let mut segment_end = schedule.segments.first().map_or(0, |s| s.0);

    let mut epoch = 0;
    loop {
        let eval = sampled.loss_and_grad(model, grids).map_err(|e| at_epoch(e, epoch))?;
        record.node_evaluations += points_per_eval;
        record.final_loss = eval.report.loss;
        record.final_lambda = eval.report.eigenvalue_estimate;

        if epoch % schedule.log_every == 0 || epoch == total {
            let errs = metrics
                .evaluate(&eval.batches, grids, &eval.grams, eval.report.eigenvalue_estimate)
                .map_err(|e| at_epoch(e, epoch))?;
            let row = LogRow {
                epoch,
                loss: eval.report.loss,
                lambda_estimate: eval.report.eigenvalue_estimate,
                e_lambda: errs.e_lambda,
                e_l2: errs.e_l2,
                e_h1: errs.e_h1,
                elapsed_seconds: start.elapsed().as_secs_f64(),
            };
            record.best.e_lambda = min_opt(record.best.e_lambda, errs.e_lambda);
            record.best.e_l2 = min_opt(record.best.e_l2, errs.e_l2);
            record.best.e_h1 = min_opt(record.best.e_h1, errs.e_h1);
            observe(&row);
            record.rows.push(row);
            if epoch < total && schedule.targets.met(&record.best) {
                record.stopped_early = true;
                break;
            }
        }
        if epoch == total {
            break;
        }

        while epoch >= segment_end {
            segment += 1;
            segment_end += schedule.segments[segment].0;
        }
        opt.set_learning_rate(schedule.segments[segment].1)?;
        opt.step(model, &eval.gradient).map_err(|e| at_epoch(e, epoch))?;
        epoch += 1;
    }
    record.epochs_run = epoch;
    Ok(record)
}

fn at_epoch(e: TnnError, epoch: usize) -> TnnError {
    match e {
        TnnError::Numeric(m) => TnnError::Numeric(format!("epoch {epoch}: {m}")),
        TnnError::Degenerate(m) => TnnError::Degenerate(format!("epoch {epoch}: {m}")),
        other => other,
    }
}
