//! Run configuration: a single TOML file per experiment.
//!
//! Only `problem` and `dim` are required; everything else falls back to the
//! per-problem protocol defaults from [`RunConfig::defaults_for`].
//!
//! ```toml
//! problem = "laplace"
//! dim = 5
//! seed = 0
//! log_every = 100
//! output_dir = "runs/laplace-d5"
//!
//! [model]
//! rank = 10
//! depth = 2
//! width = 50
//! activation = "tanh"
//!
//! [quadrature]
//! subintervals = 10
//! points_per_subinterval = 16
//!
//! [optimizer]
//! kind = "adam"
//! segments = [[100000, 0.003]]   # or: learning_rate = 0.003 with epochs = ...
//!
//! [targets]                       # optional early stop
//! e_lambda = 1e-6
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Result, TnnError};
use crate::network::{Activation, ModelSpec};
use crate::problems::{make_problem, Problem, DEFAULT_TRUNCATION, PROBLEM_NAMES};
use crate::quadrature::{composite_rule, Grid1D, MAX_POINTS};
use crate::training::{OptimizerKind, Schedule, StopTargets};

/// Dimensions at or above this use the reduced ultra-high-d protocol.
pub const ULTRA_HIGH_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub rank: usize,
    pub depth: usize,
    pub width: usize,
    pub activation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub subintervals: usize,
    pub points_per_subinterval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// `(epochs, learning rate)` pairs run in order.
    pub segments: Vec<(usize, f64)>,
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub dim: usize,
    pub seed: u64,
    pub epochs: usize,
    pub log_every: usize,
    pub output_dir: PathBuf,
    /// Half-width of the truncated domain for the oscillator problems.
    pub truncation: f64,
    pub model: ModelConfig,
    pub quadrature: QuadratureConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "StopTargets::is_empty")]
    pub targets: StopTargets,
}

impl RunConfig {
    /// Protocol defaults for `problem` at dimension `dim`.
    pub fn defaults_for(problem: &str, dim: usize) -> Result<Self> {
        if !PROBLEM_NAMES.contains(&problem) {
            return Err(TnnError::Config {
                key: "problem".into(),
                line: 0,
                message: format!("unknown problem {problem:?}; expected one of {PROBLEM_NAMES:?}"),
            });
        }
        let ultra = dim >= ULTRA_HIGH_DIM;
        let (rank, width, sub, pts, lr, epochs) = match (problem, ultra) {
            ("laplace", false) => (10, 50, 10, 16, 0.003, 100_000),
            ("laplace", true) => (10, 20, 50, 4, 1e-4, 50_000),
            ("harmonic", false) => (10, 50, 100, 16, 0.01, 100_000),
            ("harmonic", true) => (10, 50, 50, 4, 1e-3, 100_000),
            ("coupled", _) => (20, 50, 100, 16, 0.001, 500_000),
            ("neumann", _) => (2 * dim.max(1), 50, 10, 16, 0.003, 100_000),
            _ => unreachable!("checked above"),
        };
        Ok(RunConfig {
            problem: problem.to_string(),
            dim,
            seed: 0,
            epochs,
            log_every: 100,
            output_dir: PathBuf::from(format!("runs/{problem}-d{dim}")),
            truncation: DEFAULT_TRUNCATION,
            model: ModelConfig {
                rank,
                depth: 2,
                width,
                activation: "tanh".into(),
            },
            quadrature: QuadratureConfig {
                subintervals: sub,
                points_per_subinterval: pts,
            },
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                segments: vec![(epochs, lr)],
            },
            targets: StopTargets::default(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    pub fn build_problem(&self) -> Result<Problem> {
        make_problem(&self.problem, self.dim, self.truncation)
    }

    pub fn build_grids(&self, problem: &Problem) -> Result<Vec<Grid1D>> {
        problem
            .intervals
            .iter()
            .map(|&(a, b)| {
                composite_rule(
                    a,
                    b,
                    self.quadrature.subintervals,
                    self.quadrature.points_per_subinterval,
                )
            })
            .collect()
    }

    pub fn model_spec(&self, problem: &Problem) -> Result<ModelSpec> {
        Ok(ModelSpec {
            dim: self.dim,
            rank: self.model.rank,
            depth: self.model.depth,
            width: self.model.width,
            activation: parse_activation(&self.model.activation, 0)?,
            boundary: problem.boundary(),
            intervals: problem.intervals.clone(),
        })
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            segments: self.optimizer.segments.clone(),
            optimizer: self.optimizer.kind,
            log_every: self.log_every,
            targets: self.targets,
        }
    }

    /// Same run at a different rank, writing under `output_dir/p<rank>`.
    pub fn with_rank(&self, rank: usize) -> Self {
        let mut c = self.clone();
        c.model.rank = rank;
        c.output_dir = self.output_dir.join(format!("p{rank}"));
        c
    }

    /// Re-checks every field; used after programmatic edits.
    pub fn validate(&self) -> Result<()> {
        parse_config(&self.to_toml()).map(|_| ())
    }
}

fn parse_activation(name: &str, line: usize) -> Result<Activation> {
    Activation::parse(name).ok_or_else(|| TnnError::Config {
        key: "model.activation".into(),
        line,
        message: format!("unknown activation {name:?}; expected \"tanh\" or \"sine\""),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: Spanned<String>,
    dim: Spanned<i64>,
    seed: Option<Spanned<i64>>,
    epochs: Option<Spanned<i64>>,
    log_every: Option<Spanned<i64>>,
    output_dir: Option<Spanned<String>>,
    truncation: Option<Spanned<f64>>,
    model: Option<RawModel>,
    quadrature: Option<RawQuadrature>,
    optimizer: Option<RawOptimizer>,
    targets: Option<RawTargets>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    rank: Option<Spanned<i64>>,
    depth: Option<Spanned<i64>>,
    width: Option<Spanned<i64>>,
    activation: Option<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadrature {
    subintervals: Option<Spanned<i64>>,
    points_per_subinterval: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    kind: Option<Spanned<String>>,
    learning_rate: Option<Spanned<f64>>,
    segments: Option<Spanned<Vec<(i64, f64)>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTargets {
    e_lambda: Option<Spanned<f64>>,
    e_l2: Option<Spanned<f64>>,
    e_h1: Option<Spanned<f64>>,
}

struct Lines<'a> {
    text: &'a str,
}

impl Lines<'_> {
    fn line<T>(&self, v: &Spanned<T>) -> usize {
        line_of(self.text, v.span().start)
    }

    fn err<T>(&self, key: &str, v: &Spanned<T>, message: impl Into<String>) -> TnnError {
        TnnError::Config {
            key: key.into(),
            line: self.line(v),
            message: message.into(),
        }
    }

    fn count(&self, key: &str, v: &Spanned<i64>, min: i64) -> Result<usize> {
        let x = *v.get_ref();
        if x < min {
            return Err(self.err(key, v, format!("must be >= {min}, got {x}")));
        }
        Ok(x as usize)
    }

    fn positive(&self, key: &str, v: &Spanned<f64>) -> Result<f64> {
        let x = *v.get_ref();
        if !(x.is_finite() && x > 0.0) {
            return Err(self.err(key, v, format!("must be a positive finite number, got {x}")));
        }
        Ok(x)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Best-effort key name for a TOML syntax or type error.
fn key_near(text: &str, offset: usize) -> String {
    let line_start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    match line.split_once('=') {
        Some((k, _)) => k.trim().to_string(),
        None => line.trim().trim_matches(['[', ']']).to_string(),
    }
}

/// Parses and validates a TOML run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, key) = match e.span() {
            Some(span) => (line_of(text, span.start), key_near(text, span.start)),
            None => (0, String::new()),
        };
        let message = e.message().to_string();
        let key = unknown_field(&message).unwrap_or(key);
        TnnError::Config { key, line, message }
    })?;
    let l = Lines { text };

    let problem = raw.problem.get_ref().clone();
    if !PROBLEM_NAMES.contains(&problem.as_str()) {
        return Err(l.err(
            "problem",
            &raw.problem,
            format!("unknown problem {problem:?}; expected one of {PROBLEM_NAMES:?}"),
        ));
    }
    let dim_min = if problem == "coupled" { 2 } else { 1 };
    let dim = l.count("dim", &raw.dim, dim_min)?;
    let mut cfg = RunConfig::defaults_for(&problem, dim)?;

    if let Some(v) = &raw.seed {
        cfg.seed = l.count("seed", v, 0)? as u64;
    }
    if let Some(v) = &raw.log_every {
        cfg.log_every = l.count("log_every", v, 1)?;
    }
    if let Some(v) = &raw.output_dir {
        if v.get_ref().is_empty() {
            return Err(l.err("output_dir", v, "must not be empty"));
        }
        cfg.output_dir = PathBuf::from(v.get_ref());
    }
    if let Some(v) = &raw.truncation {
        cfg.truncation = l.positive("truncation", v)?;
    }
    if let Some(m) = &raw.model {
        if let Some(v) = &m.rank {
            cfg.model.rank = l.count("model.rank", v, 1)?;
        }
        if let Some(v) = &m.depth {
            cfg.model.depth = l.count("model.depth", v, 1)?;
        }
        if let Some(v) = &m.width {
            cfg.model.width = l.count("model.width", v, 1)?;
        }
        if let Some(v) = &m.activation {
            parse_activation(v.get_ref(), l.line(v))?;
            cfg.model.activation = v.get_ref().clone();
        }
    }
    if let Some(q) = &raw.quadrature {
        if let Some(v) = &q.subintervals {
            cfg.quadrature.subintervals = l.count("quadrature.subintervals", v, 1)?;
        }
        if let Some(v) = &q.points_per_subinterval {
            let n = l.count("quadrature.points_per_subinterval", v, 1)?;
            if n > MAX_POINTS {
                return Err(l.err(
                    "quadrature.points_per_subinterval",
                    v,
                    format!("at most {MAX_POINTS} points are supported, got {n}"),
                ));
            }
            cfg.quadrature.points_per_subinterval = n;
        }
    }

    // Epoch budget and learning-rate segments.
    let epochs = raw.epochs.as_ref().map(|v| l.count("epochs", v, 0)).transpose()?;
    let mut lr = None;
    let mut segments = None;
    if let Some(o) = &raw.optimizer {
        if let Some(v) = &o.kind {
            cfg.optimizer.kind = match v.get_ref().as_str() {
                "adam" => OptimizerKind::Adam,
                "gd" => OptimizerKind::Gd,
                other => {
                    return Err(l.err(
                        "optimizer.kind",
                        v,
                        format!("unknown optimizer {other:?}; expected \"adam\" or \"gd\""),
                    ))
                }
            };
        }
        if let (Some(a), Some(_)) = (&o.learning_rate, &o.segments) {
            return Err(l.err(
                "optimizer.learning_rate",
                a,
                "give either learning_rate or segments, not both",
            ));
        }
        if let Some(v) = &o.learning_rate {
            lr = Some(l.positive("optimizer.learning_rate", v)?);
        }
        if let Some(v) = &o.segments {
            let mut segs = Vec::with_capacity(v.get_ref().len());
            for &(n, rate) in v.get_ref() {
                if n < 0 {
                    return Err(l.err("optimizer.segments", v, format!("negative epoch count {n}")));
                }
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(l.err(
                        "optimizer.segments",
                        v,
                        format!("learning rate must be positive, got {rate}"),
                    ));
                }
                segs.push((n as usize, rate));
            }
            if segs.is_empty() {
                return Err(l.err("optimizer.segments", v, "needs at least one segment"));
            }
            segments = Some((segs, v));
        }
    }
    match (segments, epochs) {
        (Some((segs, v)), Some(e)) => {
            let total: usize = segs.iter().map(|s| s.0).sum();
            if total != e {
                return Err(l.err(
                    "optimizer.segments",
                    v,
                    format!("segments cover {total} epochs but epochs = {e}"),
                ));
            }
            cfg.optimizer.segments = segs;
        }
        (Some((segs, _)), None) => cfg.optimizer.segments = segs,
        (None, e) => {
            let default_lr = cfg.optimizer.segments[0].1;
            cfg.optimizer.segments = vec![(e.unwrap_or(cfg.epochs), lr.unwrap_or(default_lr))];
        }
    }
    cfg.epochs = cfg.optimizer.segments.iter().map(|s| s.0).sum();

    if let Some(t) = &raw.targets {
        if let Some(v) = &t.e_lambda {
            cfg.targets.e_lambda = Some(l.positive("targets.e_lambda", v)?);
        }
        if let Some(v) = &t.e_l2 {
            cfg.targets.e_l2 = Some(l.positive("targets.e_l2", v)?);
        }
        if let Some(v) = &t.e_h1 {
            cfg.targets.e_h1 = Some(l.positive("targets.e_h1", v)?);
        }
    }
    Ok(cfg)
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_laplace_gets_protocol_defaults() {
        let c = parse_config("problem = \"laplace\"\ndim = 5\n").unwrap();
        assert_eq!(c.model.rank, 10);
        assert_eq!(c.model.depth, 2);
        assert_eq!(c.model.width, 50);
        assert_eq!(c.quadrature.subintervals, 10);
        assert_eq!(c.quadrature.points_per_subinterval, 16);
        assert_eq!(c.optimizer.kind, OptimizerKind::Adam);
        assert_eq!(c.optimizer.segments, vec![(100_000, 0.003)]);
        assert_eq!(c.epochs, 100_000);
        assert_eq!(c.model.activation, "tanh");
        assert!(c.targets.is_empty());
    }

    #[test]
    fn ultra_high_defaults() {
        let c = parse_config("problem = \"laplace\"\ndim = 128\n").unwrap();
        assert_eq!(c.model.width, 20);
        assert_eq!(
            (c.quadrature.subintervals, c.quadrature.points_per_subinterval),
            (50, 4)
        );
        assert_eq!(c.optimizer.segments, vec![(50_000, 1e-4)]);
    }

    #[test]
    fn negative_rank_names_key_and_line() {
        let text = "problem = \"laplace\"\ndim = 5\n\n[model]\nrank = -3\n";
        match parse_config(text) {
            Err(TnnError::Config { key, line, .. }) => {
                assert_eq!(key, "model.rank");
                assert_eq!(line, 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("problem = \"laplace\"\ndim = 5\nlearnin_rate = 0.1\n").unwrap_err();
        match err {
            TnnError::Config { key, line, .. } => {
                assert_eq!(key, "learnin_rate");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config("problem = \"laplace\"\ndim = 5\n[model]\nrnak = 3\n").is_err());
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse_config("problem = \"laplace\"\ndim = \"five\"\n").unwrap_err();
        match err {
            TnnError::Config { key, line, .. } => {
                assert_eq!(key, "dim");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn segments_and_epochs_must_agree() {
        let ok = "problem = \"harmonic\"\ndim = 2\n[optimizer]\nsegments = [[10, 0.01], [5, 0.001]]\n";
        let c = parse_config(ok).unwrap();
        assert_eq!(c.epochs, 15);
        let bad = "problem = \"harmonic\"\ndim = 2\nepochs = 10\n[optimizer]\nsegments = [[10, 0.01], [5, 0.001]]\n";
        assert!(matches!(parse_config(bad), Err(TnnError::Config { .. })));
        let both = "problem = \"harmonic\"\ndim = 2\n[optimizer]\nlearning_rate = 0.1\nsegments = [[10, 0.01]]\n";
        assert!(parse_config(both).is_err());
        let lr =
            parse_config("problem = \"harmonic\"\ndim = 2\nepochs = 7\n[optimizer]\nlearning_rate = 0.5\n").unwrap();
        assert_eq!(lr.optimizer.segments, vec![(7, 0.5)]);
    }

    #[test]
    fn invalid_values() {
        for (text, key) in [
            ("problem = \"helium\"\ndim = 5\n", "problem"),
            ("problem = \"coupled\"\ndim = 1\n", "dim"),
            ("problem = \"laplace\"\ndim = 5\nlog_every = 0\n", "log_every"),
            (
                "problem = \"laplace\"\ndim = 5\n[model]\nactivation = \"relu\"\n",
                "model.activation",
            ),
            (
                "problem = \"laplace\"\ndim = 5\n[quadrature]\npoints_per_subinterval = 65\n",
                "quadrature.points_per_subinterval",
            ),
            (
                "problem = \"laplace\"\ndim = 5\n[optimizer]\nkind = \"sgd\"\n",
                "optimizer.kind",
            ),
            (
                "problem = \"laplace\"\ndim = 5\n[optimizer]\nlearning_rate = -1.0\n",
                "optimizer.learning_rate",
            ),
            (
                "problem = \"laplace\"\ndim = 5\n[targets]\ne_lambda = 0.0\n",
                "targets.e_lambda",
            ),
        ] {
            match parse_config(text) {
                Err(TnnError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn round_trip() {
        let text = "problem = \"coupled\"\ndim = 4\nseed = 9\n[model]\nrank = 3\nactivation = \"sine\"\n[targets]\ne_lambda = 1e-4\n";
        let c = parse_config(text).unwrap();
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }
}
