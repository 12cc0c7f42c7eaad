use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tnn_core::config::{parse_config, RunConfig};
use tnn_core::runner::{csv_row, exit_code, run_experiment_with, sweep_rank, CSV_HEADER};
use tnn_core::{Result, TnnError};

/// Overrides `output_dir` from the config file.
const ENV_OUTPUT_DIR: &str = "TNN_OUTPUT_DIR";
/// Number of worker threads; defaults to all cores.
const ENV_THREADS: &str = "TNN_THREADS";

#[derive(Parser)]
#[command(
    name = "tnn",
    version,
    about = "Tensor neural network solvers for high-dimensional PDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model as described by a TOML config.
    Run {
        config: PathBuf,
        /// Print every logged row to stdout.
        #[arg(long)]
        verbose: bool,
    },
    /// Repeat a run for each rank in a comma-separated list.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        ranks: Vec<usize>,
    },
    /// Run the built-in correctness checks.
    Check,
}

fn load_config(path: &PathBuf) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| TnnError::Config {
        key: "<file>".into(),
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut cfg = parse_config(&text)?;
    if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(ENV_THREADS) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| TnnError::Config {
            key: ENV_THREADS.into(),
            line: 0,
            message: format!("expected a positive integer, got {v:?}"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| TnnError::Config {
            key: ENV_THREADS.into(),
            line: 0,
            message: e.to_string(),
        })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3e}"))
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, verbose } => {
            let cfg = load_config(&config)?;
            if verbose {
                println!("{CSV_HEADER}");
            }
            let out = run_experiment_with(&cfg, |row| {
                if verbose {
                    println!("{}", csv_row(row));
                }
            })?;
            let s = &out.summary;
            println!(
                "{} d={} p={}: {} after {} epochs; best e_lambda {} e_l2 {} e_h1 {}; output in {}",
                s.problem,
                s.dim,
                s.rank,
                s.status,
                s.epochs_run,
                fmt_opt(s.best.e_lambda),
                fmt_opt(s.best.e_l2),
                fmt_opt(s.best.e_h1),
                out.output_dir.display()
            );
            Ok(())
        }
        Command::Sweep { config, ranks } => {
            let cfg = load_config(&config)?;
            let entries = sweep_rank(&cfg, &ranks)?;
            println!("p,best_e_lambda,status");
            for e in &entries {
                println!("{},{},{}", e.rank, fmt_opt(e.best_e_lambda), e.status);
            }
            if let Some(failed) = entries.iter().find(|e| e.error.is_some()) {
                return Err(TnnError::Numeric(format!(
                    "run at p={} failed: {}",
                    failed.rank,
                    failed.error.as_deref().unwrap_or("")
                )));
            }
            Ok(())
        }
        Command::Check => {
            let results = tnn_core::check::run_all();
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            if ok {
                Ok(())
            } else {
                Err(TnnError::Numeric("self-check failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
