//! Ready-made models and scenarios.
//!
//! Layer counts and feature sizes are illustrative, except for the first
//! ResNet-50-like stage (3.2 MB output, 13.3 KB after its compressor).

use crate::admission::{ArrivalProcess, ControllerConfig, ControllerMode};
use crate::confidence::SyntheticStage;
use crate::engine::{ComputeDelays, OracleConfig, ScenarioConfig, TopologyConfig};
use crate::model::{build_partition, CompressorSpec, ModelSpec};

/// 32x32 RGB image.
pub const CIFAR_INPUT_BYTES: u64 = 32 * 32 * 3;

fn stage(a: f64, b: f64, p: f64) -> SyntheticStage {
    SyntheticStage {
        beta_a: a,
        beta_b: b,
        p_correct: p,
    }
}

/// Five exits, ten classes.
pub fn mobilenet_v2_model() -> ModelSpec {
    build_partition(53, &[8, 18, 30, 44, 53], 10, &[401_408, 200_704, 100_352, 62_720, 40]).expect("valid partition")
}

pub fn mobilenet_v2_oracle() -> Vec<SyntheticStage> {
    vec![
        stage(2.0, 3.0, 0.62),
        stage(3.0, 2.5, 0.75),
        stage(4.0, 2.0, 0.84),
        stage(6.0, 1.5, 0.89),
        stage(8.0, 1.0, 0.92),
    ]
}

/// Three exits, ten classes; optionally with the 3.2 MB -> 13.3 KB
/// compressor after the first exit.
pub fn resnet50_model(compressed: bool) -> ModelSpec {
    let m = build_partition(50, &[10, 22, 50], 10, &[3_200_000, 800_000, 40]).expect("valid partition");
    if compressed {
        m.with_compressor(CompressorSpec {
            stage_index: 1,
            compressed_bytes: 13_300,
            accuracy_penalty: 0.022,
        })
        .expect("valid compressor")
    } else {
        m
    }
}

pub fn resnet50_oracle() -> Vec<SyntheticStage> {
    vec![stage(2.0, 3.0, 0.70), stage(4.0, 2.0, 0.86), stage(8.0, 1.0, 0.94)]
}

/// Scenario on a built-in topology with default controller constants
/// (T_Q1 = 10, T_Q2 = 30, alpha = 0.2, beta = 0.1, zeta = 0.2) and no
/// adaptation.
pub fn scenario(topology: &str, model: ModelSpec, oracle: Vec<SyntheticStage>) -> ScenarioConfig {
    ScenarioConfig {
        seed: 1,
        topology: TopologyConfig::builtin(topology),
        compute_delay: ComputeDelays::Uniform(0.05),
        model,
        input_bytes: CIFAR_INPUT_BYTES,
        oracle: OracleConfig::Synthetic { stages: oracle },
        controller: ControllerConfig::default(),
        output_queue_threshold: 50,
        initial_threshold: 0.8,
        arrivals: ArrivalProcess::Poisson { rate: 5.0 },
        duration: None,
        max_data: Some(1000),
        warmup: None,
        gossip_period: 0.1,
        gossip_bytes: 0,
        result_bytes: None,
        queue_sample_period: 0.5,
        neighbor_order: Default::default(),
        staleness_bound: None,
        churn: Vec::new(),
        scripted_draws: None,
    }
}

pub fn with_mode(mut cfg: ScenarioConfig, mode: ControllerMode) -> ScenarioConfig {
    cfg.controller.mode = mode;
    if mode == ControllerMode::RateAdaptation {
        cfg.arrivals = ArrivalProcess::Adaptive { interarrival: 1.0 };
    }
    cfg
}
