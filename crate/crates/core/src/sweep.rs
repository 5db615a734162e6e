//! Parameter sweeps: one run per (value, seed), summarized into `sweep.csv`.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admission::{ArrivalProcess, ControllerMode};
use crate::engine::{self, ComputeDelays, EngineError, RunOptions, RunOutput, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptVariable {
    /// Poisson arrival rate, data per second.
    ArrivalRate,
    /// Fixed early-exit threshold.
    Threshold,
    /// Built-in topology name.
    Topology,
}

impl SweptVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweptVariable::ArrivalRate => "arrival_rate",
            SweptVariable::Threshold => "threshold",
            SweptVariable::Topology => "topology",
        }
    }
}

fn default_seeds() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub variable: SweptVariable,
    pub values: Vec<Value>,
    /// Runs per value, with seeds `base.seed`, `base.seed + 1`, ...
    #[serde(default = "default_seeds")]
    pub seeds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub variable: &'static str,
    pub value: String,
    pub seed: u64,
    pub achieved_rate: f64,
    pub accuracy: Option<f64>,
    pub mean_latency: Option<f64>,
    pub controller_mean: Option<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "variable,value,seed,achieved_rate,accuracy,mean_latency";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.variable,
            self.value,
            self.seed,
            self.achieved_rate,
            opt(self.accuracy),
            opt(self.mean_latency)
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        engine::config::parse_json(text)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::ConfigInvalid(m));
        if self.values.is_empty() {
            return bad("values must not be empty".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        let mode = self.base.controller.mode;
        match self.variable {
            SweptVariable::ArrivalRate if mode == ControllerMode::RateAdaptation => {
                return bad("sweeping arrival_rate requires controller mode none or threshold_adaptation".into())
            }
            SweptVariable::Threshold if mode == ControllerMode::ThresholdAdaptation => {
                return bad("sweeping threshold requires controller mode none or rate_adaptation".into())
            }
            SweptVariable::Topology if !matches!(self.base.compute_delay, ComputeDelays::Uniform(_)) => {
                return bad("sweeping topology requires a single uniform compute_delay".into())
            }
            _ => {}
        }
        for (i, v) in self.values.iter().enumerate() {
            let ok = match self.variable {
                SweptVariable::ArrivalRate | SweptVariable::Threshold => v.is_number(),
                SweptVariable::Topology => v.is_string(),
            };
            if !ok {
                return bad(format!("values[{i}] has the wrong type for {}", self.variable.as_str()));
            }
            self.point(i, 0)?.validate()?;
        }
        Ok(())
    }

    /// Config for value `index` and seed offset `rep`.
    pub fn point(&self, index: usize, rep: u32) -> Result<ScenarioConfig, EngineError> {
        let mut cfg = self.base.clone();
        cfg.seed = self.base.seed.wrapping_add(rep as u64);
        let v = &self.values[index];
        let num = || {
            v.as_f64()
                .ok_or_else(|| EngineError::ConfigInvalid(format!("values[{index}] is not a number")))
        };
        match self.variable {
            SweptVariable::ArrivalRate => cfg.arrivals = ArrivalProcess::Poisson { rate: num()? },
            SweptVariable::Threshold => cfg.initial_threshold = num()?,
            SweptVariable::Topology => {
                cfg.topology.name = v
                    .as_str()
                    .ok_or_else(|| EngineError::ConfigInvalid(format!("values[{index}] is not a string")))?
                    .to_string()
            }
        }
        Ok(cfg)
    }

    pub fn run_label(&self, index: usize, rep: u32) -> String {
        let label: String = value_label(&self.values[index])
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
            .collect();
        format!("{index:03}_{label}_seed{}", self.base.seed.wrapping_add(rep as u64))
    }
}

pub struct SweepRun {
    pub index: usize,
    pub rep: u32,
    pub row: SweepRow,
    pub output: RunOutput,
}

/// Outcome of a sweep: completed runs in (value, seed) order, and the first
/// error if the sweep was cut short.
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    pub error: Option<EngineError>,
}

impl SweepOutcome {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }
}

/// Runs every point of the sweep on up to `parallel` threads. Runs share no
/// state; the first failure stops the scheduling of further runs.
pub fn run_sweep(spec: &SweepSpec, base_dir: Option<&Path>, parallel: usize) -> Result<SweepOutcome, EngineError> {
    spec.validate()?;
    let jobs: Vec<(usize, u32)> = (0..spec.values.len())
        .flat_map(|i| (0..spec.seeds).map(move |r| (i, r)))
        .collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let done: Mutex<Vec<SweepRun>> = Mutex::new(Vec::new());
    let first_error: Mutex<Option<(usize, EngineError)>> = Mutex::new(None);
    let options = RunOptions::default();

    let work = || loop {
        if failed.load(Ordering::SeqCst) {
            return;
        }
        let j = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(index, rep)) = jobs.get(j) else {
            return;
        };
        let result = spec
            .point(index, rep)
            .and_then(|cfg| engine::run_with_options(&cfg, base_dir, &options).map(|o| (cfg, o)));
        match result {
            Ok((cfg, output)) => {
                let row = SweepRow {
                    variable: spec.variable.as_str(),
                    value: value_label(&spec.values[index]),
                    seed: cfg.seed,
                    achieved_rate: output.report.achieved_rate,
                    accuracy: output.report.accuracy,
                    mean_latency: output.report.latency.as_ref().map(|l| l.mean),
                    controller_mean: output.report.controller_mean,
                };
                done.lock().unwrap().push(SweepRun {
                    index,
                    rep,
                    row,
                    output,
                });
            }
            Err(e) => {
                failed.store(true, Ordering::SeqCst);
                let mut slot = first_error.lock().unwrap();
                if slot.as_ref().is_none_or(|(k, _)| j < *k) {
                    *slot = Some((j, e));
                }
                return;
            }
        }
    };

    let threads = parallel.max(1).min(jobs.len());
    if threads <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(work);
            }
        });
    }

    let mut runs = done.into_inner().unwrap();
    runs.sort_by_key(|r| (r.index, r.rep));
    Ok(SweepOutcome {
        runs,
        error: first_error.into_inner().unwrap().map(|(_, e)| e),
    })
}
