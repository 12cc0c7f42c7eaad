//! Experiment driver: one training run per call, with its convergence CSV,
//! JSON summary and checkpoint written to the run's output directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Result, TnnError};
use crate::network::TnnModel;
use crate::training::{train_with_observer, LogRow, SampledProblem, TrainRecord};

pub const CSV_HEADER: &str = "epoch,loss,lambda_estimate,e_lambda,e_l2,e_h1,elapsed_seconds";
pub const CSV_FILE: &str = "convergence.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Process exit status for an error: 1 for configuration problems, 2 for
/// numeric or training failures.
pub fn exit_code(e: &TnnError) -> i32 {
    match e {
        TnnError::Config { .. } | TnnError::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One CSV line without the trailing newline.
pub fn csv_row(row: &LogRow) -> String {
    let mut s = String::new();
    write!(
        s,
        "{},{},{},{},{},{},{:.6}",
        row.epoch,
        row.loss,
        opt(row.lambda_estimate),
        opt(row.e_lambda),
        opt(row.e_l2),
        opt(row.e_h1),
        row.elapsed_seconds
    )
    .expect("writing to a String");
    s
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metrics {
    pub loss: Option<f64>,
    pub lambda_estimate: Option<f64>,
    pub e_lambda: Option<f64>,
    pub e_l2: Option<f64>,
    pub e_h1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub status: String,
    pub error: Option<String>,
    pub problem: String,
    pub dim: usize,
    pub rank: usize,
    pub seed: u64,
    pub parameters: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub elapsed_seconds: f64,
    #[serde(rename = "final")]
    pub final_metrics: Metrics,
    pub best: Metrics,
    pub exact_eigenvalue: Option<f64>,
    pub version: String,
    pub threads: usize,
    pub config: RunConfig,
}

impl RunSummary {
    fn new(config: &RunConfig, parameters: usize, exact: Option<f64>) -> Self {
        let empty = Metrics {
            loss: None,
            lambda_estimate: None,
            e_lambda: None,
            e_l2: None,
            e_h1: None,
        };
        RunSummary {
            status: "running".into(),
            error: None,
            problem: config.problem.clone(),
            dim: config.dim,
            rank: config.model.rank,
            seed: config.seed,
            parameters,
            epochs_run: 0,
            stopped_early: false,
            elapsed_seconds: 0.0,
            final_metrics: empty.clone(),
            best: empty,
            exact_eigenvalue: exact,
            version: crate::VERSION.to_string(),
            threads: rayon::current_num_threads(),
            config: config.clone(),
        }
    }

    fn record(&mut self, rec: &TrainRecord) {
        let last = rec.rows.last();
        self.epochs_run = rec.epochs_run;
        self.stopped_early = rec.stopped_early;
        self.elapsed_seconds = last.map_or(0.0, |r| r.elapsed_seconds);
        self.final_metrics = Metrics {
            loss: Some(rec.final_loss),
            lambda_estimate: rec.final_lambda,
            e_lambda: last.and_then(|r| r.e_lambda),
            e_l2: last.and_then(|r| r.e_l2),
            e_h1: last.and_then(|r| r.e_h1),
        };
        self.best = Metrics {
            loss: rec.rows.iter().map(|r| r.loss).reduce(f64::min),
            lambda_estimate: rec.rows.iter().filter_map(|r| r.lambda_estimate).reduce(f64::min),
            e_lambda: rec.best.e_lambda,
            e_l2: rec.best.e_l2,
            e_h1: rec.best.e_h1,
        };
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub record: TrainRecord,
    pub model: TnnModel,
    pub output_dir: PathBuf,
}

fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(|e| TnnError::Io(e.to_string()))?;
    fs::write(dir.join(SUMMARY_FILE), text + "\n")?;
    Ok(())
}

/// Trains the configured model and writes `convergence.csv`, `summary.json`
/// and `model.json` into `config.output_dir`. A failed run still leaves a
/// summary with `status = "failed"` and the error text.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    run_experiment_with(config, |_| {})
}

/// [`run_experiment`] with a callback on every logged row.
pub fn run_experiment_with(config: &RunConfig, mut observe: impl FnMut(&LogRow)) -> Result<RunOutcome> {
    config.validate()?;
    let problem = config.build_problem()?;
    let grids = config.build_grids(&problem)?;
    let spec = config.model_spec(&problem)?;
    let mut model = TnnModel::init(&spec, config.seed)?;

    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut summary = RunSummary::new(config, model.param_count(), problem.exact_eigenvalue);

    let file = fs::File::create(dir.join(CSV_FILE))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{CSV_HEADER}")?;
    let mut io_error: Option<std::io::Error> = None;
    let result = train_with_observer(&mut model, &problem, &grids, &config.schedule(), |row| {
        if io_error.is_none() {
            if let Err(e) = writeln!(csv, "{}", csv_row(row)).and_then(|_| csv.flush()) {
                io_error = Some(e);
            }
        }
        observe(row);
    });
    csv.flush()?;
    if let Some(e) = io_error {
        return Err(e.into());
    }

    match result {
        Ok(record) => {
            summary.record(&record);
            summary.status = if record.stopped_early {
                "target_reached"
            } else {
                "completed"
            }
            .into();
            model.save(&dir.join(CHECKPOINT_FILE))?;
            write_summary(&dir, &summary)?;
            Ok(RunOutcome {
                summary,
                record,
                model,
                output_dir: dir,
            })
        }
        Err(e) => {
            summary.status = "failed".into();
            summary.error = Some(e.to_string());
            write_summary(&dir, &summary)?;
            Err(e)
        }
    }
}

/// Re-evaluates the loss of a checkpoint on the grids of `config`.
pub fn checkpoint_loss(config: &RunConfig, path: &Path) -> Result<f64> {
    let model = TnnModel::load(path)?;
    let problem = config.build_problem()?;
    problem.check_model(&model)?;
    let grids = config.build_grids(&problem)?;
    let sampled = SampledProblem::new(&problem, &grids)?;
    Ok(sampled.loss_and_grad(&model, &grids)?.report.loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub rank: usize,
    pub best_e_lambda: Option<f64>,
    pub status: String,
    pub error: Option<String>,
}

/// One run per rank, each under `output_dir/p<rank>`, plus a combined
/// `sweep.csv` with columns `p,best_e_lambda,status`. A failing run is
/// recorded and the sweep continues.
pub fn sweep_rank(base: &RunConfig, ranks: &[usize]) -> Result<Vec<SweepEntry>> {
    let mut seen = BTreeSet::new();
    for &p in ranks {
        if p == 0 {
            return Err(TnnError::Config {
                key: "ranks".into(),
                line: 0,
                message: "rank must be >= 1".into(),
            });
        }
        if !seen.insert(p) {
            return Err(TnnError::Config {
                key: "ranks".into(),
                line: 0,
                message: format!("rank {p} appears more than once"),
            });
        }
    }
    base.validate()?;
    fs::create_dir_all(&base.output_dir)?;
    let mut entries = Vec::with_capacity(ranks.len());
    for &p in ranks {
        let cfg = base.with_rank(p);
        let entry = match run_experiment(&cfg) {
            Ok(out) => SweepEntry {
                rank: p,
                best_e_lambda: out.summary.best.e_lambda,
                status: out.summary.status,
                error: None,
            },
            Err(e) => SweepEntry {
                rank: p,
                best_e_lambda: None,
                status: "failed".into(),
                error: Some(e.to_string()),
            },
        };
        entries.push(entry);
        write_sweep_csv(&base.output_dir, &entries)?;
    }
    write_sweep_csv(&base.output_dir, &entries)?;
    Ok(entries)
}

fn write_sweep_csv(dir: &Path, entries: &[SweepEntry]) -> Result<()> {
    let mut s = String::from("p,best_e_lambda,status\n");
    for e in entries {
        s.push_str(&format!("{},{},{}\n", e.rank, opt(e.best_e_lambda), e.status));
    }
    fs::write(dir.join(SWEEP_FILE), s)?;
    Ok(())
}
