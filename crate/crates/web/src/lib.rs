//! Browser bindings: each export runs small simulations or confidence
//! computations and returns JSON for the page to plot.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mdi_exit::admission::{ArrivalProcess, ControllerMode};
use mdi_exit::confidence::{confidence, softmax, SyntheticStage};
use mdi_exit::engine::{run, ComputeDelays, ScenarioConfig};
use mdi_exit::model::{build_partition, ModelSpec};
use mdi_exit::presets::{
    mobilenet_v2_model, mobilenet_v2_oracle, resnet50_model, resnet50_oracle, scenario, with_mode,
};

const MAX_RATE: f64 = 200.0;

#[derive(Serialize)]
struct CurvePoint {
    rate: f64,
    achieved_rate: f64,
    accuracy: Option<f64>,
    mean_threshold: Option<f64>,
}

fn model_named(name: &str) -> Result<(ModelSpec, Vec<SyntheticStage>), String> {
    match name {
        "mobilenet_v2" => Ok((mobilenet_v2_model(), mobilenet_v2_oracle())),
        "resnet50" => Ok((resnet50_model(false), resnet50_oracle())),
        "resnet50_compressed" => Ok((resnet50_model(true), resnet50_oracle())),
        other => Err(format!("unknown model '{other}'")),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// Accuracy against Poisson arrival rate under threshold adaptation.
/// Returns a JSON array of `{rate, achieved_rate, accuracy, mean_threshold}`.
#[wasm_bindgen]
pub fn accuracy_curve(topology: &str, model: &str, rates: &[f64], seed: u64, duration: f64) -> Result<String, String> {
    let (spec, stages) = model_named(model)?;
    if !(duration > 0.0 && duration <= 3600.0) {
        return Err("duration must be in (0, 3600] seconds".into());
    }
    let base = with_mode(scenario(topology, spec, stages), ControllerMode::ThresholdAdaptation);
    let points = rates
        .iter()
        .map(|&rate| {
            if !(rate > 0.0 && rate <= MAX_RATE) {
                return Err(format!("rate {rate} must be in (0, {MAX_RATE}]"));
            }
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.compute_delay = ComputeDelays::Uniform(0.1);
            cfg.arrivals = ArrivalProcess::Poisson { rate };
            cfg.max_data = None;
            cfg.duration = Some(duration);
            let r = run(&cfg).map_err(|e| e.to_string())?.report;
            Ok(CurvePoint {
                rate,
                achieved_rate: r.achieved_rate,
                accuracy: r.accuracy,
                mean_threshold: r.controller_mean,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(to_json(&points))
}

#[derive(Serialize)]
struct ControllerTrace {
    time: Vec<f64>,
    interarrival: Vec<f64>,
    queue: Vec<usize>,
    achieved_rate: f64,
}

fn single_worker(compute_delay: f64, sleep: f64, duration: f64) -> ScenarioConfig {
    let model = build_partition(2, &[2], 10, &[40]).expect("valid partition");
    let stages = vec![SyntheticStage {
        beta_a: 2.0,
        beta_b: 2.0,
        p_correct: 0.8,
    }];
    let mut cfg = with_mode(scenario("local", model, stages), ControllerMode::RateAdaptation);
    cfg.compute_delay = ComputeDelays::Uniform(compute_delay);
    cfg.controller.sleep = sleep;
    cfg.max_data = None;
    cfg.duration = Some(duration);
    cfg.queue_sample_period = 0.0;
    cfg
}

/// Interarrival time chosen by the rate controller on a single worker, with
/// the queue length it saw at each wake.
#[wasm_bindgen]
pub fn rate_controller_trace(compute_delay: f64, sleep: f64, duration: f64) -> Result<String, String> {
    if !(duration > 0.0 && duration <= 3600.0) {
        return Err("duration must be in (0, 3600] seconds".into());
    }
    let out = run(&single_worker(compute_delay, sleep, duration)).map_err(|e| e.to_string())?;
    let samples = &out.collector.controller;
    Ok(to_json(&ControllerTrace {
        time: samples.iter().map(|s| s.time).collect(),
        interarrival: samples.iter().map(|s| s.after).collect(),
        queue: samples.iter().map(|s| s.q).collect(),
        achieved_rate: out.report.achieved_rate,
    }))
}

#[derive(Serialize)]
struct Explained {
    probabilities: Vec<f64>,
    confidence: f64,
    label: usize,
    exits: bool,
}

/// Softmax, confidence and the strict exit test for one logit vector.
#[wasm_bindgen]
pub fn explain_confidence(logits: &[f64], threshold: f64) -> Result<String, String> {
    let probs = softmax(logits).map_err(|e| e.to_string())?;
    let c = confidence(&probs);
    Ok(to_json(&Explained {
        probabilities: probs.values().to_vec(),
        confidence: c.value,
        label: c.label,
        exits: c.value > threshold,
    }))
}
