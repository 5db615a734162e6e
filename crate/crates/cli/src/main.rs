use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, LevelFilter};
use serde::Serialize;
use thiserror::Error;

use mdi_exit::confidence::{evaluate, ConfidenceError, ConfidenceOracle, TraceOracle};
use mdi_exit::engine::{run_with_options, EngineError, RunOptions, ScenarioConfig};
use mdi_exit::model::ModelSpec;
use mdi_exit::output::write_run;
use mdi_exit::sweep::{run_sweep, sweep_csv, SweepSpec};
use mdi_exit::worker::WorkerError;

const LOG_ENV: &str = "MDI_EXIT_LOG";

#[derive(Parser)]
#[command(
    name = "mdi-exit",
    version,
    about = "Simulate model-distributed inference with early exit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.json plus CSV traces.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Also write events.ndjson.
        #[arg(long)]
        event_log: bool,
    },
    /// Run every (value, seed) point of a sweep and write sweep.csv.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Check a logit trace against a model and print per-exit statistics.
    ValidateTrace { trace: PathBuf, model: PathBuf },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Failed(_) => 1,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn engine(path: &Path, e: EngineError) -> CliError {
        match e {
            EngineError::Io(source) | EngineError::Oracle(ConfidenceError::Io(source)) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            EngineError::ConfigInvalid(_)
            | EngineError::UnknownTopology(_)
            | EngineError::SourceCannotLeave
            | EngineError::Oracle(_)
            | EngineError::Worker(WorkerError::OracleMiss(_)) => CliError::Invalid(format!("{}: {e}", path.display())),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn init_logging() {
    let level = match std::env::var(LOG_ENV).as_deref() {
        Ok("off") => LevelFilter::Off,
        Ok("events") => LevelFilter::Trace,
        Ok("summary") | Err(_) => LevelFilter::Info,
        Ok(other) => {
            eprintln!("warning: {LOG_ENV}={other} is not one of off, summary, events; using summary");
            LevelFilter::Info
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

fn cmd_run(config: &Path, seed: Option<u64>, out_dir: &Path, event_log: bool) -> Result<(), CliError> {
    let mut cfg = ScenarioConfig::from_json(&read(config)?).map_err(|e| CliError::engine(config, e))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let options = RunOptions {
        event_log,
        audit: false,
    };
    let out = run_with_options(&cfg, config.parent(), &options).map_err(|e| CliError::engine(config, e))?;
    write_run(out_dir, &out).map_err(CliError::io(out_dir))?;
    info!(
        "wrote {}: {} results, rate {:.4}/s",
        out_dir.display(),
        out.report.delivered,
        out.report.achieved_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepStatus {
    complete: bool,
    completed_runs: usize,
    expected_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_sweep(spec_path: &Path, out_dir: &Path, parallel: usize) -> Result<(), CliError> {
    let spec = SweepSpec::from_json(&read(spec_path)?).map_err(|e| CliError::engine(spec_path, e))?;
    let outcome = run_sweep(&spec, spec_path.parent(), parallel).map_err(|e| CliError::engine(spec_path, e))?;
    let io_err = CliError::io(out_dir);
    let write = || -> io::Result<()> {
        for r in &outcome.runs {
            write_run(&out_dir.join("runs").join(spec.run_label(r.index, r.rep)), &r.output)?;
        }
        fs::write(out_dir.join("sweep.csv"), sweep_csv(&outcome.rows()))?;
        let status = SweepStatus {
            complete: outcome.error.is_none(),
            completed_runs: outcome.runs.len(),
            expected_runs: spec.values.len() * spec.seeds as usize,
            error: outcome.error.as_ref().map(ToString::to_string),
        };
        fs::write(
            out_dir.join("sweep_status.json"),
            serde_json::to_string_pretty(&status).expect("status serializes") + "\n",
        )
    };
    fs::create_dir_all(out_dir).and_then(|_| write()).map_err(io_err)?;
    match outcome.error {
        Some(e) => {
            log::error!(
                "sweep stopped after {} runs; partial results in {}",
                outcome.runs.len(),
                out_dir.display()
            );
            Err(CliError::engine(spec_path, e))
        }
        None => {
            info!("wrote {} runs to {}", outcome.runs.len(), out_dir.display());
            Ok(())
        }
    }
}

struct StageStats {
    mean_confidence: f64,
    accuracy: f64,
}

fn trace_stats(trace: &TraceOracle) -> Result<Vec<StageStats>, ConfidenceError> {
    let n = trace.len() as f64;
    (1..=trace.num_stages())
        .map(|k| {
            let (mut conf, mut correct) = (0.0, 0usize);
            for d in trace.datum_ids() {
                let c = evaluate(&trace.logits_for(d, k)?);
                conf += c.value;
                correct += usize::from(c.label == trace.truth(d)?);
            }
            Ok(StageStats {
                mean_confidence: conf / n,
                accuracy: correct as f64 / n,
            })
        })
        .collect()
}

fn cmd_validate_trace(trace_path: &Path, model_path: &Path) -> Result<(), CliError> {
    let model = ModelSpec::from_json(&read(model_path)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", model_path.display())))?;
    let trace = TraceOracle::load(trace_path).map_err(|e| match e {
        ConfidenceError::Io(source) => CliError::Io {
            path: trace_path.to_path_buf(),
            source,
        },
        other => CliError::Invalid(format!("{}: {other}", trace_path.display())),
    })?;
    if trace.num_stages() != model.num_stages() || trace.num_classes() != model.num_classes() {
        let e = ConfidenceError::DimensionMismatch(format!(
            "trace has {} stages x {} classes, model has {} x {}",
            trace.num_stages(),
            trace.num_classes(),
            model.num_stages(),
            model.num_classes()
        ));
        return Err(CliError::Invalid(e.to_string()));
    }
    if trace.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: trace has no rows",
            trace_path.display()
        )));
    }
    let stats = trace_stats(&trace).map_err(|e| CliError::Invalid(e.to_string()))?;
    println!(
        "{} data, {} stages, {} classes",
        trace.len(),
        trace.num_stages(),
        trace.num_classes()
    );
    println!("stage  mean_confidence  accuracy");
    for (k, s) in stats.iter().enumerate() {
        println!("{:>5}  {:>15.4}  {:>8.4}", k + 1, s.mean_confidence, s.accuracy);
    }
    let (first, last) = (&stats[0], &stats[stats.len() - 1]);
    if last.accuracy < first.accuracy {
        eprintln!(
            "warning: final-exit accuracy {:.4} is below first-exit accuracy {:.4}; the trace looks suspicious",
            last.accuracy, first.accuracy
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let result = match &cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            event_log,
        } => cmd_run(config, *seed, out_dir, *event_log),
        Command::Sweep {
            spec,
            out_dir,
            parallel,
        } => cmd_sweep(spec, out_dir, *parallel),
        Command::ValidateTrace { trace, model } => cmd_validate_trace(trace, model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
