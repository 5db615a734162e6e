//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line; run with `cargo test -p mdi-exit --test acceptance -- --nocapture`.

use std::collections::HashSet;
use std::time::Instant;

use mdi_exit::admission::{ArrivalProcess, ControllerMode};
use mdi_exit::confidence::{construct_logits, evaluate, softmax, SyntheticStage, TraceOracle};
use mdi_exit::engine::{
    ComputeDelays, LogEntry, Medium, RunOptions, RunOutput, ScenarioConfig, Simulation, TopologyConfig,
};
use mdi_exit::model::build_partition;
use mdi_exit::offload::{offload_decision, Branch, Decision, DecisionInputs, LinkSpec};
use mdi_exit::output::write_run;
use mdi_exit::presets::{
    mobilenet_v2_model, mobilenet_v2_oracle, resnet50_model, resnet50_oracle, scenario, with_mode,
};
use mdi_exit::run_with_options;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: &str, ok: bool, detail: String) {
    println!("criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn run_cfg(cfg: &ScenarioConfig, options: &RunOptions) -> RunOutput {
    run_with_options(cfg, None, options).expect("run succeeds")
}

fn run_trace(cfg: &ScenarioConfig, oracle: TraceOracle, options: &RunOptions) -> RunOutput {
    Simulation::new(cfg.clone(), Box::new(oracle), options)
        .and_then(Simulation::run)
        .expect("run succeeds")
}

// ---------------------------------------------------------------- 1

/// exp(x) from its Taylor series after range reduction, summed with
/// Kahan compensation. Shares nothing with the library's softmax.
fn exp_series(x: f64) -> f64 {
    let halvings = 12;
    let r = x / f64::from(1u32 << halvings);
    let (mut sum, mut comp, mut term) = (1.0f64, 0.0f64, 1.0f64);
    for k in 1..40 {
        term *= r / k as f64;
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    (0..halvings).fold(sum, |acc, _| acc * acc)
}

fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|&x| exp_series(x)).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

#[test]
fn criterion_1_softmax_and_confidence() {
    let start = Instant::now();
    let expected = [0.66524, 0.24473, 0.09003];
    let oracle = softmax_oracle(&[2.0, 1.0, 0.0]);
    let got = softmax(&[2.0, 1.0, 0.0]).unwrap();
    let mut ok = got
        .values()
        .iter()
        .zip(oracle.iter().zip(expected))
        .all(|(g, (o, e))| (g - o).abs() < 1e-12 && (g - e).abs() <= 1e-5);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_sum = 0.0f64;
    for _ in 0..10_000 {
        let len = rng.random_range(1..64);
        let z: Vec<f64> = (0..len).map(|_| rng.random_range(-60.0..60.0)).collect();
        let p = softmax(&z).unwrap();
        worst_sum = worst_sum.max((p.values().iter().sum::<f64>() - 1.0).abs());
    }
    ok &= worst_sum <= 1e-9;

    let mut worst_trip = 0.0f64;
    for v in [2usize, 3, 10, 100, 1000] {
        for i in 1..200 {
            let lo = 1.0 / v as f64;
            let c = lo + (1.0 - lo) * i as f64 / 200.0;
            let label = i % v;
            let back = evaluate(&construct_logits(c, label, v).unwrap());
            ok &= back.label == label;
            worst_trip = worst_trip.max((back.value - c).abs());
        }
    }
    ok &= worst_trip < 1e-9;
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 1.0;
    verdict(
        "1",
        ok,
        format!(
            "softmax {:?}, worst |sum-1| {worst_sum:.2e}, worst round trip {worst_trip:.2e}, {elapsed:.3}s",
            got.values()
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_conservation() {
    let mut failures = Vec::new();
    let mut slowest = 0.0f64;
    for mode in [ControllerMode::RateAdaptation, ControllerMode::ThresholdAdaptation] {
        for seed in 1..=10 {
            let mut cfg = with_mode(scenario("mesh3", mobilenet_v2_model(), mobilenet_v2_oracle()), mode);
            cfg.seed = seed;
            cfg.max_data = Some(1000);
            let start = Instant::now();
            let out = run_with_options(
                &cfg,
                None,
                &RunOptions {
                    event_log: false,
                    audit: true,
                },
            );
            let secs = start.elapsed().as_secs_f64();
            slowest = slowest.max(secs);
            match out {
                Ok(out) => {
                    let ids: HashSet<u64> = out.collector.results.iter().map(|r| r.datum_id).collect();
                    let n = out.collector.results.len();
                    if n != 1000 || ids.len() != 1000 || out.report.admitted != 1000 || secs >= 10.0 {
                        failures.push(format!(
                            "{mode:?}/{seed}: {n} results, {} unique, {secs:.2}s",
                            ids.len()
                        ));
                    }
                }
                Err(e) => failures.push(format!("{mode:?}/{seed}: {e}")),
            }
        }
    }
    verdict(
        "2",
        failures.is_empty(),
        format!("20 runs, slowest {slowest:.2}s, failures {failures:?}"),
    );
}

// ---------------------------------------------------------------- 3

fn threshold_trace(n: u64, stages: usize, classes: usize) -> TraceOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = (0..n).map(|d| {
        let truth = rng.random_range(0..classes);
        let mut logits = Vec::new();
        for _ in 0..stages {
            let peak = rng.random_range(0..classes);
            // one clearly leading class keeps every confidence away from 1/v and 1
            logits.extend((0..classes).map(|c| {
                if c == peak {
                    rng.random_range(1.0..4.0)
                } else {
                    rng.random_range(-0.5..0.5)
                }
            }));
        }
        (d, truth, logits)
    });
    TraceOracle::from_rows(stages, classes, rows.collect::<Vec<_>>()).unwrap()
}

#[test]
fn criterion_3_threshold_extremes() {
    let (n, k, v) = (400u64, 3usize, 10usize);
    let model = build_partition(9, &[3, 6, 9], v, &[5000, 2000, 40]).unwrap();
    let stages = vec![
        SyntheticStage {
            beta_a: 1.0,
            beta_b: 1.0,
            p_correct: 0.5
        };
        k
    ];
    let mut cfg = scenario("mesh3", model, stages);
    cfg.max_data = Some(n);

    cfg.initial_threshold = 1.0;
    let high = run_trace(&cfg, threshold_trace(n, k, v), &RunOptions::default());
    cfg.initial_threshold = 1.0 / v as f64 + 1e-6;
    let low = run_trace(&cfg, threshold_trace(n, k, v), &RunOptions::default());

    let all = |o: &RunOutput, stage: usize| {
        let mut h = vec![0u64; k];
        for r in &o.collector.results {
            h[r.exit_stage - 1] += 1;
        }
        (h[stage - 1] == n, h)
    };
    let (ok_high, h_high) = all(&high, k);
    let (ok_low, h_low) = all(&low, 1);
    verdict(
        "3",
        ok_high && ok_low,
        format!("T_e = 1 -> {h_high:?}, T_e = 1/v + 1e-6 -> {h_low:?}"),
    );
}

// ---------------------------------------------------------------- 4

/// Straight-line replay of the two-worker scenario below: queue placement,
/// offloading with scripted draws, periodic state exchange, idle reclaim and
/// result return.
mod replay {
    use std::collections::VecDeque;

    pub struct Params {
        pub gamma: [f64; 2],
        pub interarrival: f64,
        pub data: u64,
        pub latency: f64,
        pub bandwidth: f64,
        pub input_bytes: f64,
        pub feature_bytes: f64,
        pub result_bytes: f64,
        pub output_threshold: usize,
        pub exit_threshold: f64,
        pub gossip_period: f64,
        pub draws: Vec<f64>,
        /// confidence[d][stage - 1]
        pub confidence: Vec<[f64; 2]>,
    }

    #[derive(Clone, Copy)]
    enum Ev {
        Arrival,
        Done(usize),
        Tx { from: usize, d: u64, stage: usize },
        Gossip,
        Deliver { w: usize, d: u64, stage: usize },
    }

    /// Returns `(t, kind, worker, from, to, datum, stage, branch)` rows.
    #[allow(clippy::type_complexity)]
    pub fn replay(
        p: &Params,
    ) -> Vec<(
        f64,
        &'static str,
        Option<usize>,
        Option<usize>,
        Option<usize>,
        Option<u64>,
        Option<usize>,
        Option<&'static str>,
    )> {
        let mut out = Vec::new();
        let mut pending: Vec<(f64, u64, Ev)> = vec![(0.0, 0, Ev::Arrival), (p.gossip_period, 1, Ev::Gossip)];
        let mut seq = 2u64;
        let mut input: [VecDeque<(u64, usize)>; 2] = [VecDeque::new(), VecDeque::new()];
        let mut output: [VecDeque<(u64, usize)>; 2] = [VecDeque::new(), VecDeque::new()];
        let mut busy: [Option<(u64, usize)>; 2] = [None, None];
        let mut seen = [0usize; 2]; // what worker w last heard about the other's input queue
        let mut in_flight = [0usize; 2];
        let mut link_busy = [false; 2]; // indexed by sender
        let mut draw_idx = 0;
        let (mut admitted, mut resolved, mut open) = (0u64, 0u64, true);

        while open || resolved < admitted {
            let i = (0..pending.len())
                .min_by(|&a, &b| {
                    pending[a]
                        .0
                        .total_cmp(&pending[b].0)
                        .then(pending[a].1.cmp(&pending[b].1))
                })
                .expect("events remain");
            let (t, _, ev) = pending.remove(i);
            let mut touched = [false; 2];
            match ev {
                Ev::Arrival => {
                    out.push((t, "Arrival", None, None, None, Some(admitted), None, None));
                    input[0].push_back((admitted, 1));
                    admitted += 1;
                    touched[0] = true;
                    if admitted < p.data {
                        pending.push((t + p.interarrival, seq, Ev::Arrival));
                        seq += 1;
                    } else {
                        open = false;
                    }
                }
                Ev::Done(w) => {
                    let (d, stage) = busy[w].take().unwrap();
                    out.push((t, "ComputeComplete", Some(w), None, None, Some(d), Some(stage), None));
                    if stage == 2 || p.confidence[d as usize][stage - 1] > p.exit_threshold {
                        let back = if w == 0 {
                            0.0
                        } else {
                            p.latency + p.result_bytes / p.bandwidth
                        };
                        pending.push((t + back, seq, Ev::Deliver { w, d, stage }));
                        seq += 1;
                    } else if input[w].is_empty() || output[w].len() > p.output_threshold {
                        input[w].push_back((d, stage + 1));
                    } else {
                        output[w].push_back((d, stage + 1));
                    }
                    touched[w] = true;
                }
                Ev::Tx { from, d, stage } => {
                    let to = 1 - from;
                    out.push((t, "TxComplete", None, Some(from), Some(to), Some(d), Some(stage), None));
                    link_busy[from] = false;
                    in_flight[from] -= 1;
                    input[to].push_back((d, stage));
                    touched = [true, true];
                }
                Ev::Gossip => {
                    out.push((t, "GossipTick", None, None, None, None, None, None));
                    seen = [input[1].len(), input[0].len()];
                    touched = [true, true];
                    pending.push((t + p.gossip_period, seq, Ev::Gossip));
                    seq += 1;
                }
                Ev::Deliver { w, d, stage } => {
                    out.push((t, "ResultDelivered", Some(w), None, None, Some(d), Some(stage), None));
                    resolved += 1;
                }
            }

            for w in 0..2 {
                if busy[w].is_none() && input[w].is_empty() {
                    if let Some(task) = output[w].pop_front() {
                        input[w].push_back(task);
                        touched[w] = true;
                    }
                }
                if busy[w].is_none() {
                    if let Some(task) = input[w].pop_front() {
                        busy[w] = Some(task);
                        pending.push((t + p.gamma[w], seq, Ev::Done(w)));
                        seq += 1;
                        touched[w] = true;
                    }
                }
            }
            for w in 0..2 {
                if !touched[w] {
                    continue;
                }
                while let Some(&(d, stage)) = output[w].front() {
                    if link_busy[w] {
                        break;
                    }
                    let other_input = seen[w] + in_flight[w];
                    if output[w].len() <= other_input {
                        break;
                    }
                    let bytes = if stage == 1 { p.input_bytes } else { p.feature_bytes };
                    let link = p.latency + bytes / p.bandwidth;
                    let here = input[w].len() as f64 * p.gamma[w];
                    let there = link + other_input as f64 * p.gamma[1 - w];
                    let branch = if here > there {
                        "det"
                    } else {
                        let prob = if there <= 0.0 { 1.0 } else { (here / there).min(1.0) };
                        let draw = p.draws[draw_idx % p.draws.len()];
                        draw_idx += 1;
                        if draw < prob {
                            "prob"
                        } else {
                            break;
                        }
                    };
                    output[w].pop_front();
                    link_busy[w] = true;
                    in_flight[w] += 1;
                    out.push((
                        t,
                        "Offload",
                        None,
                        Some(w),
                        Some(1 - w),
                        Some(d),
                        Some(stage),
                        Some(branch),
                    ));
                    pending.push((t + link, seq, Ev::Tx { from: w, d, stage }));
                    seq += 1;
                }
            }
        }
        out
    }
}

#[test]
fn criterion_4_hand_trace() {
    let v = 4usize;
    // stage-1 logit peaks; 2.0 gives confidence ~0.71, 0.0 gives exactly 1/v
    let peaks = [[0.0, 0.5], [2.0, 0.0], [0.0, 1.0], [2.0, 0.3], [0.0, 0.0]];
    let conf = |x: f64| x.exp() / (x.exp() + (v - 1) as f64);
    let rows: Vec<(u64, usize, Vec<f64>)> = peaks
        .iter()
        .enumerate()
        .map(|(d, pk)| {
            let mut l = vec![0.0; 2 * v];
            l[0] = pk[0];
            l[v] = pk[1];
            (d as u64, 0, l)
        })
        .collect();
    let trace = TraceOracle::from_rows(2, v, rows).unwrap();

    let params = replay::Params {
        gamma: [0.3, 0.23],
        interarrival: 0.07,
        data: 5,
        latency: 0.011,
        bandwidth: 2.0e5,
        input_bytes: 1000.0,
        feature_bytes: 80_000.0,
        result_bytes: (v * 4) as f64,
        output_threshold: 50,
        exit_threshold: 0.5,
        gossip_period: 0.1,
        draws: vec![0.35, 0.8, 0.6, 0.05],
        confidence: peaks.iter().map(|pk| [conf(pk[0]), conf(pk[1])]).collect(),
    };

    let model = build_partition(4, &[2, 4], v, &[80_000, 40]).unwrap();
    let stages = vec![
        SyntheticStage {
            beta_a: 1.0,
            beta_b: 1.0,
            p_correct: 0.5
        };
        2
    ];
    let mut cfg = scenario("two_node", model, stages);
    cfg.topology = TopologyConfig {
        latency: params.latency,
        bandwidth: params.bandwidth,
        ..TopologyConfig::builtin("two_node")
    };
    cfg.compute_delay = ComputeDelays::PerWorker(params.gamma.to_vec());
    cfg.input_bytes = params.input_bytes as u64;
    cfg.initial_threshold = params.exit_threshold;
    cfg.arrivals = ArrivalProcess::Adaptive {
        interarrival: params.interarrival,
    };
    cfg.max_data = Some(params.data);
    cfg.queue_sample_period = 0.0;
    cfg.scripted_draws = Some(params.draws.clone());

    let engine = run_trace(
        &cfg,
        trace,
        &RunOptions {
            event_log: true,
            audit: true,
        },
    )
    .log
    .unwrap();
    let expected: Vec<LogEntry> = replay::replay(&params)
        .into_iter()
        .map(|(t, kind, worker, from, to, datum, stage, branch)| LogEntry {
            t,
            kind: kind.to_string(),
            worker,
            from,
            to,
            datum,
            stage,
            branch: branch.map(str::to_string),
        })
        .collect();
    let engine: Vec<LogEntry> = engine.into_iter().filter(|e| e.kind != "Departed").collect();

    let mismatch = engine.iter().zip(&expected).position(|(a, b)| !a.matches(b, 1e-9));
    let branches: HashSet<&str> = expected.iter().filter_map(|e| e.branch.as_deref()).collect();
    let ok = engine.len() == expected.len() && mismatch.is_none() && branches.len() == 2;
    verdict(
        "4",
        ok,
        format!(
            "{} engine entries, {} replay entries, first mismatch {:?}, branches {:?}",
            engine.len(),
            expected.len(),
            mismatch.map(|i| (&engine[i], &expected[i])),
            branches
        ),
    );
}

// ---------------------------------------------------------------- 5

fn no_exit_stages(k: usize) -> Vec<SyntheticStage> {
    vec![
        SyntheticStage {
            beta_a: 2.0,
            beta_b: 2.0,
            p_correct: 0.8
        };
        k
    ]
}

fn saturated(cfg: &mut ScenarioConfig, data: u64) {
    cfg.compute_delay = ComputeDelays::Uniform(0.1);
    cfg.initial_threshold = 1.0;
    cfg.arrivals = ArrivalProcess::Adaptive { interarrival: 0.01 };
    cfg.max_data = Some(data);
    // whole-run throughput: a lone worker finishes most data in a burst at the end
    cfg.warmup = Some(0.0);
}

#[test]
fn criterion_5_pipeline_throughput() {
    let model = build_partition(8, &[2, 4, 6, 8], 10, &[1000, 1000, 1000, 40]).unwrap();
    let mut chain = scenario("local", model.clone(), no_exit_stages(4));
    chain.topology = TopologyConfig {
        name: "custom".into(),
        num_workers: Some(4),
        links: Some(
            (0..3)
                .map(|i| LinkSpec {
                    from: i,
                    to: i + 1,
                    latency: 1e-6,
                    bandwidth: 1e15,
                    directed: true,
                })
                .collect(),
        ),
        ..TopologyConfig::builtin("custom")
    };
    saturated(&mut chain, 1000);
    let mut local = scenario("local", model, no_exit_stages(4));
    saturated(&mut local, 300);

    let chain_rate = run_cfg(&chain, &RunOptions::default()).report.achieved_rate;
    let local_rate = run_cfg(&local, &RunOptions::default()).report.achieved_rate;
    let ok = (chain_rate - 10.0).abs() <= 0.05 * 10.0 && (local_rate - 2.5).abs() <= 0.05 * 2.5;
    verdict(
        "5",
        ok,
        format!("chain {chain_rate:.4}/s (10 +-5%), local {local_rate:.4}/s (2.5 +-5%)"),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_rate_adaptation_stability() {
    let model = build_partition(2, &[2], 10, &[40]).unwrap();
    let mut cfg = with_mode(
        scenario("local", model, no_exit_stages(1)),
        ControllerMode::RateAdaptation,
    );
    cfg.compute_delay = ComputeDelays::Uniform(0.1);
    cfg.max_data = None;
    cfg.duration = Some(10_000.0);
    cfg.queue_sample_period = 1.0;
    let out = run_cfg(&cfg, &RunOptions::default());
    let warmup = out.report.warmup;
    let samples: Vec<usize> = out
        .collector
        .queue_samples
        .iter()
        .filter(|s| s.time >= warmup)
        .map(|s| s.input_len + s.output_len)
        .collect();
    let bound = 2 * cfg.controller.t_q2 as usize;
    let within = samples.iter().filter(|&&q| q <= bound).count() as f64 / samples.len() as f64;
    let rate = out.report.achieved_rate;
    let ok = !samples.is_empty() && within >= 0.99 && (rate - 10.0).abs() <= 0.1 * 10.0;
    verdict(
        "6",
        ok,
        format!(
            "{:.2}% of {} samples with q <= {bound}, rate {rate:.4}/s",
            within * 100.0,
            samples.len()
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_threshold_adaptation_trend() {
    let mut rows = Vec::new();
    for lambda in [2.0, 5.0, 10.0] {
        let (mut te, mut acc) = (0.0, 0.0);
        for seed in 1..=3 {
            let mut cfg = with_mode(
                scenario("mesh3", mobilenet_v2_model(), mobilenet_v2_oracle()),
                ControllerMode::ThresholdAdaptation,
            );
            cfg.seed = seed;
            cfg.compute_delay = ComputeDelays::Uniform(0.15);
            cfg.arrivals = ArrivalProcess::Poisson { rate: lambda };
            cfg.max_data = None;
            cfg.duration = Some(300.0);
            let r = run_cfg(&cfg, &RunOptions::default()).report;
            te += r.controller_mean.unwrap() / 3.0;
            acc += r.accuracy.unwrap() / 3.0;
        }
        rows.push((lambda, te, acc));
    }
    let ok = rows.windows(2).all(|w| w[1].1 < w[0].1 && w[1].2 < w[0].2);
    verdict("7", ok, format!("(lambda, mean T_e, accuracy) = {rows:.4?}"));
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_offload_legality() {
    let mut configs = Vec::new();
    for mode in [ControllerMode::RateAdaptation, ControllerMode::ThresholdAdaptation] {
        for topo in ["mesh3", "mesh5", "circular3", "two_node"] {
            configs.push(with_mode(
                scenario(topo, mobilenet_v2_model(), mobilenet_v2_oracle()),
                mode,
            ));
        }
    }
    let mut resnet = with_mode(
        scenario("mesh5", resnet50_model(false), resnet50_oracle()),
        ControllerMode::ThresholdAdaptation,
    );
    resnet.arrivals = ArrivalProcess::Poisson { rate: 15.0 };
    configs.push(resnet);

    let (mut checked, mut det, mut prob, mut bad) = (0usize, 0usize, 0usize, Vec::new());
    for cfg in &configs {
        let out = run_cfg(cfg, &RunOptions::default());
        for o in out.collector.offloads.iter().filter(|o| !o.forced) {
            checked += 1;
            let i = &o.inputs;
            let here = i.input_len as f64 * i.compute_delay;
            let there = i.link_delay + i.remote_input_len as f64 * i.remote_compute_delay;
            let legal = i.output_len > i.remote_input_len
                && match o.branch {
                    Branch::Deterministic => {
                        det += 1;
                        here > there
                    }
                    Branch::Probabilistic => {
                        prob += 1;
                        let p = if there <= 0.0 { 1.0 } else { (here / there).min(1.0) };
                        here <= there && (o.p - p).abs() < 1e-12 && o.draw.is_some_and(|d| d < p)
                    }
                };
            if !legal && bad.len() < 5 {
                bad.push(format!("{o:?}"));
            }
        }
    }

    // pinned states: the probabilistic branch fires at rate p
    let states = [
        (3, 0.1, 2, 0.1, 0.3),
        (1, 0.05, 4, 0.2, 0.9),
        (6, 0.2, 0, 0.2, 1.5),
        (2, 0.1, 3, 0.05, 0.25),
    ];
    let trials = 20_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rates = Vec::new();
    let mut within = true;
    for (input_len, g, remote_len, gm, d) in states {
        let inputs = DecisionInputs {
            output_len: 10,
            input_len,
            compute_delay: g,
            remote_input_len: remote_len,
            remote_compute_delay: gm,
            link_delay: d,
        };
        let p = (input_len as f64 * g / (d + remote_len as f64 * gm)).min(1.0);
        let hits = (0..trials)
            .filter(|_| matches!(offload_decision(&inputs, rng.random::<f64>()), Decision::Offload { .. }))
            .count();
        let rate = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        within &= (rate - p).abs() <= 3.0 * sigma;
        rates.push((p, rate));
    }
    let ok = bad.is_empty() && det > 0 && prob > 0 && within;
    verdict(
        "8",
        ok,
        format!("{checked} offloads ({det} det, {prob} prob), illegal {bad:?}; pinned (p, rate) {rates:.4?}"),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_topology_trends() {
    // (a) adaptive rate at a fixed threshold
    let rate = |topo: &str| {
        let mut cfg = with_mode(
            scenario(topo, mobilenet_v2_model(), mobilenet_v2_oracle()),
            ControllerMode::RateAdaptation,
        );
        cfg.max_data = None;
        cfg.duration = Some(300.0);
        run_cfg(&cfg, &RunOptions::default()).report.achieved_rate
    };
    let (local, mesh3) = (rate("local"), rate("mesh3"));
    let ok_a = mesh3 > local;

    // (b) ResNet-like payloads on a single shared channel at a high rate
    let accuracy = |topo: &str, compressed: bool| {
        let mut total = 0.0;
        for seed in 1..=3 {
            let mut cfg = with_mode(
                scenario(topo, resnet50_model(compressed), resnet50_oracle()),
                ControllerMode::ThresholdAdaptation,
            );
            cfg.seed = seed;
            cfg.topology.medium = Medium::Shared;
            cfg.arrivals = ArrivalProcess::Poisson { rate: 20.0 };
            cfg.max_data = None;
            cfg.duration = Some(200.0);
            total += run_cfg(&cfg, &RunOptions::default()).report.accuracy.unwrap() / 3.0;
        }
        total
    };
    let raw = (accuracy("mesh3", false), accuracy("mesh5", false));
    let comp = (accuracy("mesh3", true), accuracy("mesh5", true));
    let ok_b = raw.1 < raw.0 && comp.1 > comp.0;
    verdict(
        "9",
        ok_a && ok_b,
        format!(
            "(a) rate local {local:.3} < mesh3 {mesh3:.3}: {ok_a}; (b) uncompressed mesh3 {:.4} > mesh5 {:.4}, compressed mesh5 {:.4} > mesh3 {:.4}: {ok_b}",
            raw.0, raw.1, comp.1, comp.0
        ),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_determinism() {
    let mut cfgs = vec![
        with_mode(
            scenario("mesh3", mobilenet_v2_model(), mobilenet_v2_oracle()),
            ControllerMode::RateAdaptation,
        ),
        with_mode(
            scenario("mesh5", resnet50_model(true), resnet50_oracle()),
            ControllerMode::ThresholdAdaptation,
        ),
    ];
    cfgs[0].seed = 42;
    cfgs[1].seed = 7;
    let mut differing = Vec::new();
    let mut files = 0;
    for cfg in &cfgs {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let out = run_cfg(
                cfg,
                &RunOptions {
                    event_log: true,
                    audit: false,
                },
            );
            write_run(d.path(), &out).unwrap();
        }
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            files += 1;
            let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&name)).ok();
            if b.as_deref() != Some(a.as_slice()) {
                differing.push(name.to_string_lossy().into_owned());
            }
        }
    }
    verdict(
        "10",
        differing.is_empty() && files >= 10,
        format!("{files} files compared, differing {differing:?}"),
    );
}
