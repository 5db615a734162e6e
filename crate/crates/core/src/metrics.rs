//! Run collectors and the steady-state summary: achieved rate, accuracy,
//! exit histogram, latency percentiles and controller averages.

use serde::{Deserialize, Serialize};

use crate::admission::Band;
use crate::model::ResultRecord;
use crate::offload::{Branch, OffloadRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub time: f64,
    pub worker: usize,
    pub input_len: usize,
    pub output_len: usize,
}

/// One controller wake: `before` and `after` are the interarrival time under
/// rate adaptation or the exit threshold under threshold adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSample {
    pub time: f64,
    pub worker: usize,
    pub q: usize,
    pub before: f64,
    pub after: f64,
    pub branch: Band,
}

#[derive(Debug, Clone, Default)]
pub struct Collector {
    pub num_stages: usize,
    pub results: Vec<ResultRecord>,
    pub queue_samples: Vec<QueueSample>,
    pub controller: Vec<ControllerSample>,
    pub offloads: Vec<OffloadRecord>,
    pub control_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSummary {
    pub worker: usize,
    pub mean_input: f64,
    pub mean_output: f64,
    pub max_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_hash: String,
    pub warmup: f64,
    pub end_time: f64,
    pub admitted: u64,
    pub delivered: u64,
    /// Results completed at or after the warmup.
    pub measured: u64,
    /// Measured results per second over `[warmup, last completion]`.
    pub achieved_rate: f64,
    /// `None` when nothing was measured.
    pub accuracy: Option<f64>,
    pub exit_histogram: Vec<u64>,
    pub latency: Option<LatencyStats>,
    /// Time-weighted mean of the controlled value after warmup, averaged
    /// over controllers.
    pub controller_mean: Option<f64>,
    pub queues: Vec<QueueSummary>,
    pub offloads: u64,
    pub offloads_deterministic: u64,
    pub offloads_probabilistic: u64,
    pub offloads_forced: u64,
    pub control_bytes: u64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn latency_stats(latencies: &[f64]) -> Option<LatencyStats> {
    if latencies.is_empty() {
        return None;
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(LatencyStats {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: nearest_rank(&sorted, 50.0)?,
        p95: nearest_rank(&sorted, 95.0)?,
        max: *sorted.last()?,
    })
}

/// Time-weighted average of a piecewise-constant trace over `[from, to]`.
/// `samples` must be time-ordered; the value before the first sample is its
/// `before` field.
fn time_weighted(samples: &[&ControllerSample], from: f64, to: f64) -> Option<f64> {
    let first = samples.first()?;
    if to <= from {
        return None;
    }
    let mut value = first.before;
    let mut t = from;
    let mut area = 0.0;
    for s in samples {
        if s.time <= from {
            value = s.after;
            continue;
        }
        if s.time >= to {
            break;
        }
        area += value * (s.time - t);
        t = s.time;
        value = s.after;
    }
    area += value * (to - t);
    Some(area / (to - from))
}

impl Collector {
    pub fn new(num_stages: usize) -> Self {
        Collector {
            num_stages,
            ..Default::default()
        }
    }

    pub fn record_result(&mut self, record: ResultRecord) {
        self.results.push(record);
    }

    pub fn record_queue_sample(&mut self, time: f64, worker: usize, input_len: usize, output_len: usize) {
        self.queue_samples.push(QueueSample {
            time,
            worker,
            input_len,
            output_len,
        });
    }

    /// Pure function of the collected logs and the warmup.
    pub fn summarize(&self, warmup: f64, end_time: f64, admitted: u64, seed: u64, config_hash: &str) -> MetricsReport {
        let measured: Vec<&ResultRecord> = self.results.iter().filter(|r| r.completion_time >= warmup).collect();
        let last = measured
            .iter()
            .map(|r| r.completion_time)
            .fold(f64::NEG_INFINITY, f64::max);
        let achieved_rate = if measured.is_empty() || last <= warmup {
            0.0
        } else {
            measured.len() as f64 / (last - warmup)
        };
        let accuracy = (!measured.is_empty())
            .then(|| measured.iter().filter(|r| r.correct).count() as f64 / measured.len() as f64);
        let mut exit_histogram = vec![0u64; self.num_stages];
        for r in &measured {
            exit_histogram[r.exit_stage - 1] += 1;
        }
        let latencies: Vec<f64> = measured.iter().map(|r| r.end_to_end_latency).collect();

        let mut workers: Vec<usize> = self.controller.iter().map(|c| c.worker).collect();
        workers.sort_unstable();
        workers.dedup();
        let means: Vec<f64> = workers
            .iter()
            .filter_map(|&w| {
                let trace: Vec<&ControllerSample> = self.controller.iter().filter(|c| c.worker == w).collect();
                time_weighted(&trace, warmup, end_time)
            })
            .collect();
        let controller_mean = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);

        let mut qworkers: Vec<usize> = self.queue_samples.iter().map(|q| q.worker).collect();
        qworkers.sort_unstable();
        qworkers.dedup();
        let queues = qworkers
            .into_iter()
            .filter_map(|w| {
                let s: Vec<&QueueSample> = self
                    .queue_samples
                    .iter()
                    .filter(|q| q.worker == w && q.time >= warmup)
                    .collect();
                if s.is_empty() {
                    return None;
                }
                let n = s.len() as f64;
                Some(QueueSummary {
                    worker: w,
                    mean_input: s.iter().map(|q| q.input_len as f64).sum::<f64>() / n,
                    mean_output: s.iter().map(|q| q.output_len as f64).sum::<f64>() / n,
                    max_total: s.iter().map(|q| q.input_len + q.output_len).max().unwrap_or(0),
                })
            })
            .collect();

        let count = |b: Branch, forced: bool| {
            self.offloads
                .iter()
                .filter(|o| o.branch == b && o.forced == forced)
                .count() as u64
        };

        MetricsReport {
            seed,
            config_hash: config_hash.to_string(),
            warmup,
            end_time,
            admitted,
            delivered: self.results.len() as u64,
            measured: measured.len() as u64,
            achieved_rate,
            accuracy,
            exit_histogram,
            latency: latency_stats(&latencies),
            controller_mean,
            queues,
            offloads: self.offloads.len() as u64,
            offloads_deterministic: count(Branch::Deterministic, false),
            offloads_probabilistic: count(Branch::Probabilistic, false),
            offloads_forced: self.offloads.iter().filter(|o| o.forced).count() as u64,
            control_bytes: self.control_bytes,
        }
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("datum_id,exit_stage,confidence,correct,latency\n");
        let mut rows: Vec<&ResultRecord> = self.results.iter().collect();
        rows.sort_by_key(|r| r.datum_id);
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.datum_id, r.exit_stage, r.confidence, r.correct, r.end_to_end_latency
            ));
        }
        out
    }

    pub fn queues_csv(&self) -> String {
        let mut out = String::from("time,worker,input_len,output_len\n");
        for q in &self.queue_samples {
            out.push_str(&format!("{},{},{},{}\n", q.time, q.worker, q.input_len, q.output_len));
        }
        out
    }

    pub fn controller_csv(&self) -> String {
        let mut out = String::from("time,worker,q,mu_or_Te_before,after,branch\n");
        for c in &self.controller {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.time,
                c.worker,
                c.q,
                c.before,
                c.after,
                c.branch.as_str()
            ));
        }
        out
    }

    pub fn offloads_csv(&self) -> String {
        let mut out = String::from(crate::offload::OFFLOAD_CSV_HEADER);
        out.push('\n');
        for o in &self.offloads {
            out.push_str(&o.csv_line());
            out.push('\n');
        }
        out
    }
}
