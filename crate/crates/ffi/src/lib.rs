//! C ABI over `tnn-core`.
//!
//! Every fallible function returns a [`TnnStatus`]. On failure the message is
//! available from [`tnn_last_error`] on the same thread. Solvers are opaque
//! handles created by [`tnn_solver_new`] and released by [`tnn_solver_free`].
//! Metrics that are undefined for a problem are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tnn_core::config::{parse_config, RunConfig};
use tnn_core::network::TnnModel;
use tnn_core::problems::{MetricContext, Problem};
use tnn_core::quadrature::{gauss_legendre, Grid1D};
use tnn_core::training::{train, SampledProblem};
use tnn_core::TnnError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Degenerate = 5,
    Unsupported = 6,
    Io = 7,
    Panic = 8,
}

/// Loss and errors of one model state; NaN where undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TnnMetrics {
    pub loss: f64,
    pub lambda_estimate: f64,
    pub e_lambda: f64,
    pub e_l2: f64,
    pub e_h1: f64,
}

/// Outcome of [`tnn_solver_train`]. `best` holds the minimum of each error
/// over the logged epochs, `last` the state after the final epoch.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TnnTrainResult {
    pub epochs_run: u64,
    pub stopped_early: bool,
    pub last: TnnMetrics,
    pub best: TnnMetrics,
}

/// Opaque solver handle.
pub struct TnnSolver {
    problem: Problem,
    grids: Vec<Grid1D>,
    config: RunConfig,
    model: TnnModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &TnnError) -> TnnStatus {
    match e {
        TnnError::InvalidArgument(_) => TnnStatus::InvalidArgument,
        TnnError::Numeric(_) => TnnStatus::Numeric,
        TnnError::Degenerate(_) => TnnStatus::Degenerate,
        TnnError::Capability(_) => TnnStatus::Unsupported,
        TnnError::Config { .. } => TnnStatus::Config,
        TnnError::Io(_) => TnnStatus::Io,
    }
}

struct Failure(TnnStatus, String);

impl From<TnnError> for Failure {
    fn from(e: TnnError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TnnStatus::NullPointer, format!("{what} is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TnnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            TnnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TnnStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn opt_nan(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

impl TnnSolver {
    fn from_config(config: RunConfig) -> Result<Self, TnnError> {
        let problem = config.build_problem()?;
        let grids = config.build_grids(&problem)?;
        let model = TnnModel::init(&config.model_spec(&problem)?, config.seed)?;
        Ok(TnnSolver {
            problem,
            grids,
            config,
            model,
        })
    }

    fn metrics(&self) -> Result<TnnMetrics, TnnError> {
        let sampled = SampledProblem::new(&self.problem, &self.grids)?;
        let eval = sampled.loss_and_grad(&self.model, &self.grids)?;
        let ctx = MetricContext::new(&self.problem, &self.grids)?;
        let errs = ctx.evaluate(&eval.batches, &self.grids, &eval.grams, eval.report.eigenvalue_estimate)?;
        Ok(TnnMetrics {
            loss: eval.report.loss,
            lambda_estimate: opt_nan(eval.report.eigenvalue_estimate),
            e_lambda: opt_nan(errs.e_lambda),
            e_l2: opt_nan(errs.e_l2),
            e_h1: opt_nan(errs.e_h1),
        })
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tnn_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn tnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Writes the `n` Gauss–Legendre nodes and weights on `[-1, 1]` into the
/// caller's arrays, each of length `n`.
///
/// # Safety
/// `nodes` and `weights` must each point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tnn_gauss_legendre(n: usize, nodes: *mut f64, weights: *mut f64) -> TnnStatus {
    guard(|| {
        if nodes.is_null() || weights.is_null() {
            return Err(null("output array"));
        }
        let (x, w) = gauss_legendre(n)?;
        std::slice::from_raw_parts_mut(nodes, n).copy_from_slice(&x);
        std::slice::from_raw_parts_mut(weights, n).copy_from_slice(&w);
        Ok(())
    })
}

/// Builds a solver from TOML config text and initializes its model.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_new(config_toml: *const c_char, out: *mut *mut TnnSolver) -> TnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let text = str_arg(config_toml, "config_toml")?;
        let solver = TnnSolver::from_config(parse_config(text)?)?;
        *out = Box::into_raw(Box::new(solver));
        Ok(())
    })
}

/// Releases a solver. NULL is ignored.
///
/// # Safety
/// `solver` must come from [`tnn_solver_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_free(solver: *mut TnnSolver) {
    if !solver.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(solver))));
    }
}

/// # Safety
/// `solver` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_dim(solver: *const TnnSolver, out: *mut usize) -> TnnStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| null("solver"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.problem.dim();
        Ok(())
    })
}

/// Runs the configured schedule from the current parameters with a fresh
/// optimizer state. `out` may be NULL.
///
/// # Safety
/// `solver` must be a live handle; `out` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_train(solver: *mut TnnSolver, out: *mut TnnTrainResult) -> TnnStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| null("solver"))?;
        let record = train(&mut s.model, &s.problem, &s.grids, &s.config.schedule())?;
        if let Some(out) = out.as_mut() {
            let last = record.rows.last();
            let min_loss = record.rows.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
            let min_lambda = record.rows.iter().filter_map(|r| r.lambda_estimate).reduce(f64::min);
            *out = TnnTrainResult {
                epochs_run: record.epochs_run as u64,
                stopped_early: record.stopped_early,
                last: TnnMetrics {
                    loss: record.final_loss,
                    lambda_estimate: opt_nan(record.final_lambda),
                    e_lambda: opt_nan(last.and_then(|r| r.e_lambda)),
                    e_l2: opt_nan(last.and_then(|r| r.e_l2)),
                    e_h1: opt_nan(last.and_then(|r| r.e_h1)),
                },
                best: TnnMetrics {
                    loss: min_loss,
                    lambda_estimate: opt_nan(min_lambda),
                    e_lambda: opt_nan(record.best.e_lambda),
                    e_l2: opt_nan(record.best.e_l2),
                    e_h1: opt_nan(record.best.e_h1),
                },
            };
        }
        Ok(())
    })
}

/// Loss and errors of the current model.
///
/// # Safety
/// `solver` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_metrics(solver: *const TnnSolver, out: *mut TnnMetrics) -> TnnStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| null("solver"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = s.metrics()?;
        Ok(())
    })
}

/// Evaluates `Ψ` at `count` points stored row-major in `points`
/// (`count * dim` doubles) and writes `count` values to `values`.
///
/// # Safety
/// `points` must hold `count * dim` doubles and `values` `count` doubles.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_evaluate(
    solver: *const TnnSolver,
    points: *const f64,
    count: usize,
    dim: usize,
    values: *mut f64,
) -> TnnStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| null("solver"))?;
        if dim != s.problem.dim() {
            return Err(Failure(
                TnnStatus::InvalidArgument,
                format!("points have dimension {dim}, solver has {}", s.problem.dim()),
            ));
        }
        if count == 0 {
            return Ok(());
        }
        if points.is_null() || values.is_null() {
            return Err(null("points or values"));
        }
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Failure(TnnStatus::InvalidArgument, "count * dim overflows".into()))?;
        let pts = std::slice::from_raw_parts(points, total);
        let out = std::slice::from_raw_parts_mut(values, count);
        for (x, v) in pts.chunks_exact(dim).zip(out.iter_mut()) {
            *v = s.model.evaluate_point(x)?;
        }
        Ok(())
    })
}

/// Writes the current model as a JSON checkpoint.
///
/// # Safety
/// `solver` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_save_checkpoint(solver: *const TnnSolver, path: *const c_char) -> TnnStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| null("solver"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        s.model.save(&path)?;
        Ok(())
    })
}

/// Replaces the model with a checkpoint whose shape matches the problem.
///
/// # Safety
/// `solver` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tnn_solver_load_checkpoint(solver: *mut TnnSolver, path: *const c_char) -> TnnStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| null("solver"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let model = TnnModel::load(&path)?;
        s.problem.check_model(&model)?;
        s.model = model;
        Ok(())
    })
}
