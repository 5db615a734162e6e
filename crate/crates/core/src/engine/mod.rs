//! Single-threaded discrete-event engine. It owns the clock, the event heap,
//! the workers and their neighbor views, and routes results to the source.
//!
//! All randomness comes from the scenario seed through named substreams
//! (arrivals, offload draws, oracle, compressor penalties), and ties in time
//! are broken by scheduling order, so a `(config, seed)` pair always replays
//! the same run.

pub mod config;
pub mod event;
pub mod topology;

use std::collections::BinaryHeap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::admission::{adapt_interarrival, adapt_threshold, ControllerMode, SourceState, ThresholdScope};
use crate::confidence::{ConfidenceError, ConfidenceOracle};
use crate::metrics::{Collector, ControllerSample, MetricsReport};
use crate::model::{Datum, ModelSpec, ResultRecord, Task};
use crate::offload::{
    offload_rule, scan_order, transmission_delay, Branch, DecisionInputs, LinkSpec, NeighborView, OffloadRecord, Rule,
};
use crate::rng::{self, Stream};
use crate::worker::{ExitDecision, Outcome, WorkerError, WorkerState};

pub use config::{ChurnAction, ChurnSpec, ComputeDelays, Medium, OracleConfig, ScenarioConfig, TopologyConfig};
pub use event::{Event, EventKind, LogEntry};
pub use topology::{built_in_topology, Topology, SOURCE};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("unknown topology '{0}'")]
    UnknownTopology(String),
    #[error("deadlock at t = {time}: {unresolved} admitted data unresolved")]
    DeadlockDetected { time: f64, unresolved: u64 },
    #[error("the source cannot leave")]
    SourceCannotLeave,
    #[error("datum {0} delivered twice")]
    DuplicateResult(u64),
    #[error("audit failed at t = {time}: {message}")]
    AuditFailed { time: f64, message: String },
    #[error(transparent)]
    Worker(#[from] WorkerError),
    #[error(transparent)]
    Oracle(#[from] ConfidenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Consecutive bookkeeping-only events tolerated while data is unresolved.
const MAX_IDLE_EVENTS: u64 = 1_000_000;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub event_log: bool,
    /// Checks task conservation after every event (slow).
    pub audit: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub collector: Collector,
    pub log: Option<Vec<LogEntry>>,
}

impl RunOutput {
    pub fn event_log_ndjson(&self) -> Option<String> {
        self.log.as_ref().map(|log| {
            log.iter()
                .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
                .collect()
        })
    }
}

enum Draws {
    Seeded(Box<ChaCha8Rng>),
    Scripted { values: Vec<f64>, next: usize },
}

impl Draws {
    fn next(&mut self) -> f64 {
        match self {
            Draws::Seeded(rng) => rng.random::<f64>(),
            Draws::Scripted { values, next } => {
                let v = values[*next % values.len()];
                *next += 1;
                v
            }
        }
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    topology: Topology,
    model: ModelSpec,
    oracle: Box<dyn ConfidenceOracle>,
    workers: Vec<WorkerState>,
    /// Per worker, views of task neighbors in the order of `links`.
    views: Vec<Vec<NeighborView>>,
    links: Vec<Vec<LinkSpec>>,
    last_target: Vec<Option<usize>>,
    link_busy: Vec<Vec<bool>>,
    medium_busy: bool,
    /// First worker offered the shared medium; rotates past each sender.
    medium_turn: usize,
    source: SourceState,
    arrival_rng: ChaCha8Rng,
    draws: Draws,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    arrivals_open: bool,
    /// Bumped when the pending arrival is rescheduled; stale arrivals are dropped.
    arrival_gen: u64,
    last_arrival: f64,
    arrival_times: Vec<f64>,
    delivered: Vec<bool>,
    resolved: u64,
    pending_results: Vec<(usize, ExitDecision)>,
    progress_pending: usize,
    idle_events: u64,
    global_threshold: f64,
    dirty: Vec<bool>,
    collector: Collector,
    log: Option<Vec<LogEntry>>,
    audit: bool,
    result_bytes: u64,
}

/// Validates `config`, builds its oracle and runs it to completion.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    run_with_options(config, None, &RunOptions::default())
}

pub fn run_with_options(
    config: &ScenarioConfig,
    base_dir: Option<&Path>,
    options: &RunOptions,
) -> Result<RunOutput, EngineError> {
    let oracle = config.build_oracle(base_dir)?;
    Simulation::new(config.clone(), oracle, options)?.run()
}

impl Simulation {
    pub fn new(
        cfg: ScenarioConfig,
        oracle: Box<dyn ConfidenceOracle>,
        options: &RunOptions,
    ) -> Result<Self, EngineError> {
        let topology = cfg.validate()?;
        let model = cfg.model.clone();
        if oracle.num_stages() != model.num_stages() || oracle.num_classes() != model.num_classes() {
            return Err(EngineError::ConfigInvalid(
                "oracle dimensions do not match the model".into(),
            ));
        }
        let n = topology.num_workers;
        let k = model.num_stages();
        let present = cfg.initially_present(n);
        let workers: Vec<WorkerState> = cfg
            .compute_delays(n)
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                let mut w = WorkerState::new(id, g, k, cfg.initial_threshold, cfg.output_queue_threshold);
                if !present[id] {
                    w.depart();
                }
                w
            })
            .collect();
        let links: Vec<Vec<LinkSpec>> = (0..n)
            .map(|w| topology.task_neighbors(w).into_iter().map(|(_, l)| l.clone()).collect())
            .collect();
        let views = (0..n)
            .map(|w| {
                topology
                    .task_neighbors(w)
                    .into_iter()
                    .map(|(m, l)| NeighborView {
                        neighbor: m,
                        input_len: 0,
                        compute_delay: workers[m].compute_delay,
                        latency: l.latency,
                        bandwidth: l.bandwidth,
                        observed_at: 0.0,
                        alive: workers[m].accepts_tasks(),
                        in_flight: 0,
                    })
                    .collect()
            })
            .collect();
        let draws = match &cfg.scripted_draws {
            Some(values) => Draws::Scripted {
                values: values.clone(),
                next: 0,
            },
            None => Draws::Seeded(Box::new(rng::stream(cfg.seed, Stream::OffloadDraws))),
        };
        Ok(Simulation {
            source: SourceState::new(cfg.arrivals),
            arrival_rng: rng::stream(cfg.seed, Stream::Arrivals),
            result_bytes: cfg.result_bytes(),
            global_threshold: cfg.initial_threshold,
            collector: Collector::new(k),
            log: options.event_log.then(Vec::new),
            audit: options.audit,
            dirty: vec![false; n],
            last_target: vec![None; n],
            link_busy: vec![vec![false; n]; n],
            medium_busy: false,
            medium_turn: 0,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            arrivals_open: true,
            arrival_gen: 0,
            last_arrival: 0.0,
            arrival_times: Vec::new(),
            delivered: Vec::new(),
            resolved: 0,
            pending_results: Vec::new(),
            progress_pending: 0,
            idle_events: 0,
            draws,
            views,
            links,
            workers,
            oracle,
            model,
            topology,
            cfg,
        })
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time >= self.now);
        if kind.is_progress() {
            self.progress_pending += 1;
        }
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn emit(&mut self, entry: LogEntry) {
        log::trace!("{entry:?}");
        if let Some(log) = &mut self.log {
            log.push(entry);
        }
    }

    fn schedule_arrival(&mut self, at: f64) {
        if self.may_admit(at) {
            self.schedule(
                at,
                EventKind::Arrival {
                    generation: self.arrival_gen,
                },
            );
        } else {
            self.arrivals_open = false;
        }
    }

    fn admitted(&self) -> u64 {
        self.source.admitted
    }

    fn finished(&self) -> bool {
        !self.arrivals_open && self.resolved == self.admitted()
    }

    fn may_admit(&self, at: f64) -> bool {
        self.cfg.max_data.is_none_or(|m| self.admitted() < m) && self.cfg.duration.is_none_or(|d| at < d)
    }

    pub fn run(mut self) -> Result<RunOutput, EngineError> {
        let n = self.workers.len();
        if self.may_admit(0.0) {
            self.schedule(0.0, EventKind::Arrival { generation: 0 });
        } else {
            self.arrivals_open = false;
        }
        self.schedule(self.cfg.gossip_period, EventKind::GossipTick);
        match self.cfg.controller.mode {
            ControllerMode::None => {}
            ControllerMode::RateAdaptation => {
                self.schedule(self.cfg.controller.sleep, EventKind::ControllerWake { worker: SOURCE })
            }
            ControllerMode::ThresholdAdaptation => match self.cfg.controller.threshold_scope {
                ThresholdScope::SourceGlobal => {
                    self.schedule(self.cfg.controller.sleep, EventKind::ControllerWake { worker: SOURCE })
                }
                ThresholdScope::PerWorker => {
                    for w in 0..n {
                        self.schedule(self.cfg.controller.sleep, EventKind::ControllerWake { worker: w });
                    }
                }
            },
        }
        if self.cfg.queue_sample_period > 0.0 {
            self.schedule(0.0, EventKind::QueueSample);
        }
        let mut churn = self.cfg.churn.clone();
        churn.sort_by(|a, b| a.time.total_cmp(&b.time));
        for c in churn {
            let kind = match c.action {
                ChurnAction::Join => EventKind::ChurnJoin { worker: c.worker },
                ChurnAction::Leave => EventKind::ChurnLeave { worker: c.worker },
            };
            self.schedule(c.time, kind);
        }

        while !self.finished() {
            let Some(event) = self.heap.pop() else {
                return Err(self.deadlock());
            };
            if event.time < self.now {
                return Err(EngineError::AuditFailed {
                    time: self.now,
                    message: format!("event at {} dispatched after clock {}", event.time, self.now),
                });
            }
            self.now = event.time;
            if event.kind.is_progress() {
                self.progress_pending -= 1;
                self.idle_events = 0;
            } else {
                self.idle_events += 1;
            }
            self.dispatch(event.kind)?;
            self.settle();
            if self.audit {
                self.check_conservation()?;
            }
            if !self.finished() && self.progress_pending == 0 {
                let stuck = self.idle_events > MAX_IDLE_EVENTS
                    || (self.pending_results.is_empty()
                        && self.workers.iter().all(|w| w.queued() == 0 && !w.is_busy())
                        && !self.arrivals_open);
                if stuck {
                    return Err(self.deadlock());
                }
            }
        }

        let end_time = self.now;
        let warmup = self.cfg.warmup.unwrap_or(0.1 * self.cfg.duration.unwrap_or(end_time));
        let report = self
            .collector
            .summarize(warmup, end_time, self.admitted(), self.cfg.seed, &self.cfg.hash());
        log::info!(
            "run finished: t = {:.3}, admitted = {}, rate = {:.4}, accuracy = {:?}",
            end_time,
            report.admitted,
            report.achieved_rate,
            report.accuracy
        );
        Ok(RunOutput {
            report,
            collector: self.collector,
            log: self.log,
        })
    }

    fn deadlock(&self) -> EngineError {
        EngineError::DeadlockDetected {
            time: self.now,
            unresolved: self.admitted() - self.resolved,
        }
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<(), EngineError> {
        let now = self.now;
        match kind {
            EventKind::Arrival { generation } => {
                if generation != self.arrival_gen || !self.arrivals_open {
                    return Ok(());
                }
                self.last_arrival = now;
                let id = self.source.admitted;
                self.source.admitted += 1;
                self.emit(LogEntry::new(now, "Arrival").datum(id));
                let datum = Datum {
                    id,
                    arrival_time: now,
                    input_bytes: self.cfg.input_bytes,
                    truth_label: None,
                };
                self.arrival_times.push(now);
                self.delivered.push(false);
                self.workers[SOURCE]
                    .enqueue_remote(Task::first(&datum))
                    .map_err(|(e, _)| e)?;
                self.dirty[SOURCE] = true;
                let next = self.source.next_arrival(now, &mut self.arrival_rng);
                self.schedule_arrival(next);
            }
            EventKind::ComputeComplete { worker } => {
                let task = self.workers[worker]
                    .current_task()
                    .cloned()
                    .ok_or(WorkerError::NotBusy(worker))?;
                self.emit(
                    LogEntry::new(now, "ComputeComplete")
                        .worker(worker)
                        .task(task.datum_id, task.stage),
                );
                let draw = rng::keyed(self.cfg.seed, Stream::Penalty, &[task.datum_id]).random::<f64>();
                let outcome = self.workers[worker].on_compute_complete(&self.model, self.oracle.as_ref(), draw)?;
                if let Outcome::Exit(decision) = outcome {
                    self.route_result(worker, decision);
                }
                self.dirty[worker] = true;
            }
            EventKind::TxComplete { from, to, mut task } => {
                self.emit(
                    LogEntry::new(now, "TxComplete")
                        .link(from, to)
                        .task(task.datum_id, task.stage),
                );
                match self.cfg.topology.medium {
                    Medium::PerLink => self.link_busy[from][to] = false,
                    Medium::Shared => {
                        self.medium_busy = false;
                        self.dirty.iter_mut().for_each(|d| *d = true);
                    }
                }
                if let Some(v) = self.views[from].iter_mut().find(|v| v.neighbor == to) {
                    v.in_flight -= 1;
                }
                task.hop_count += 1;
                match self.workers[to].enqueue_remote(task) {
                    Ok(()) => self.dirty[to] = true,
                    Err((_, task)) => self.workers[from].retain(task),
                }
                self.dirty[from] = true;
            }
            EventKind::GossipTick => {
                self.emit(LogEntry::new(now, "GossipTick"));
                self.gossip();
                self.schedule(now + self.cfg.gossip_period, EventKind::GossipTick);
            }
            EventKind::ControllerWake { worker } => {
                self.emit(LogEntry::new(now, "ControllerWake").worker(worker));
                self.controller_wake(worker);
                self.schedule(now + self.cfg.controller.sleep, EventKind::ControllerWake { worker });
            }
            EventKind::ChurnJoin { worker } => {
                self.emit(LogEntry::new(now, "ChurnJoin").worker(worker));
                let w = &mut self.workers[worker];
                if !w.is_alive() {
                    w.join();
                    w.set_threshold(self.global_threshold);
                    for v in &mut self.views[worker] {
                        v.alive = false;
                        v.in_flight = 0;
                        v.observed_at = now;
                    }
                    self.dirty[worker] = true;
                }
            }
            EventKind::ChurnLeave { worker } => {
                self.emit(LogEntry::new(now, "ChurnLeave").worker(worker));
                if worker == SOURCE {
                    return Err(EngineError::SourceCannotLeave);
                }
                if self.workers[worker].is_alive() {
                    self.workers[worker].begin_leave();
                    self.dirty[worker] = true;
                }
            }
            EventKind::ResultDelivered { record } => {
                self.emit(
                    LogEntry::new(now, "ResultDelivered")
                        .worker(record.exit_worker)
                        .task(record.datum_id, record.exit_stage),
                );
                let slot = &mut self.delivered[record.datum_id as usize];
                if *slot {
                    return Err(EngineError::DuplicateResult(record.datum_id));
                }
                *slot = true;
                self.resolved += 1;
                self.collector.record_result(record);
            }
            EventKind::QueueSample => {
                self.emit(LogEntry::new(now, "QueueSample"));
                for w in self.workers.iter().filter(|w| w.is_alive()) {
                    self.collector
                        .record_queue_sample(now, w.id, w.input_len(), w.output_len());
                }
                self.schedule(now + self.cfg.queue_sample_period, EventKind::QueueSample);
            }
        }
        Ok(())
    }

    fn gossip(&mut self) {
        let now = self.now;
        for n in 0..self.workers.len() {
            if !self.workers[n].is_alive() {
                continue;
            }
            for i in 0..self.views[n].len() {
                let m = self.views[n][i].neighbor;
                let peer = &self.workers[m];
                let (alive, input_len, delay) = (peer.accepts_tasks(), peer.input_len(), peer.compute_delay);
                let v = &mut self.views[n][i];
                v.alive = alive;
                v.input_len = input_len;
                v.compute_delay = delay;
                v.observed_at = now;
                self.collector.control_bytes += self.cfg.gossip_bytes;
            }
            if self.cfg.controller.mode == ControllerMode::ThresholdAdaptation
                && self.cfg.controller.threshold_scope == ThresholdScope::SourceGlobal
                && n != SOURCE
            {
                self.workers[n].set_threshold(self.global_threshold);
            }
        }
        let pending = std::mem::take(&mut self.pending_results);
        for (worker, decision) in pending {
            self.route_result(worker, decision);
        }
        self.dirty.iter_mut().for_each(|d| *d = true);
    }

    fn controller_wake(&mut self, worker: usize) {
        let cfg = self.cfg.controller.clone();
        let w = &mut self.workers[worker];
        if !w.accepts_tasks() {
            return;
        }
        let q = w.queued();
        let (before, after, band) = match cfg.mode {
            ControllerMode::None => return,
            ControllerMode::RateAdaptation => {
                let before = self.source.interarrival();
                let (after, band) = adapt_interarrival(q, before, &cfg);
                self.source.set_interarrival(after);
                if after != before && self.arrivals_open {
                    // the pending arrival follows the new spacing
                    self.arrival_gen += 1;
                    let next = (self.last_arrival + after).max(self.now);
                    self.schedule_arrival(next);
                }
                (before, after, band)
            }
            ControllerMode::ThresholdAdaptation => {
                let before = w.threshold(1);
                let (after, band) = adapt_threshold(q, before, &cfg);
                w.set_threshold(after);
                if worker == SOURCE && cfg.threshold_scope == ThresholdScope::SourceGlobal {
                    self.global_threshold = after;
                }
                (before, after, band)
            }
        };
        self.collector.controller.push(ControllerSample {
            time: self.now,
            worker,
            q,
            before,
            after,
            branch: band,
        });
    }

    fn alive_mask(&self) -> Vec<bool> {
        self.workers.iter().map(WorkerState::is_alive).collect()
    }

    fn route_result(&mut self, worker: usize, decision: ExitDecision) {
        let alive = self.alive_mask();
        match self.topology.path_delay(worker, SOURCE, self.result_bytes, &alive) {
            Some(delay) => {
                let id = decision.task.datum_id;
                let arrival_time = self.arrival_times[id as usize];
                let completion_time = self.now + delay;
                let record = ResultRecord {
                    datum_id: id,
                    exit_stage: decision.task.stage,
                    confidence: decision.confidence,
                    predicted_label: decision.predicted_label,
                    correct: decision.correct,
                    arrival_time,
                    completion_time,
                    end_to_end_latency: completion_time - arrival_time,
                    exit_worker: worker,
                };
                self.schedule(completion_time, EventKind::ResultDelivered { record });
            }
            None => self.pending_results.push((worker, decision)),
        }
    }

    /// Starts idle workers, runs the offload pump of every worker whose state
    /// changed, and retires drained leavers.
    fn settle(&mut self) {
        let n = self.workers.len();
        for w in 0..n {
            if !self.workers[w].accepts_tasks() {
                continue;
            }
            if self.workers[w].reclaim_if_idle() {
                self.dirty[w] = true;
            }
            if let Some((done, _)) = self.workers[w].start_next_task(self.now, &self.model) {
                self.schedule(done, EventKind::ComputeComplete { worker: w });
                self.dirty[w] = true;
            }
        }
        for i in 0..n {
            let w = (self.medium_turn + i) % n;
            if std::mem::take(&mut self.dirty[w]) && self.workers[w].is_alive() {
                self.pump(w);
            }
        }
        for w in 0..n {
            let worker = &self.workers[w];
            if worker.is_alive() && worker.ready_to_depart() && self.views[w].iter().all(|v| v.in_flight == 0) {
                self.workers[w].depart();
                self.emit(LogEntry::new(self.now, "Departed").worker(w));
            }
        }
    }

    fn link_free(&self, from: usize, to: usize) -> bool {
        match self.cfg.topology.medium {
            Medium::PerLink => !self.link_busy[from][to],
            Medium::Shared => !self.medium_busy,
        }
    }

    /// Offloads head-of-line output tasks while some neighbor accepts them.
    fn pump(&mut self, n: usize) {
        loop {
            let Some(head) = self.workers[n].head_output() else {
                return;
            };
            let payload = head.payload_bytes;
            let forced = self.workers[n].is_leaving();
            let now = self.now;
            let order = scan_order(&self.views[n], self.last_target[n], self.cfg.neighbor_order, payload);
            let mut chosen = None;
            for idx in order {
                let view = &self.views[n][idx];
                let fresh = self.cfg.staleness_bound.is_none_or(|b| view.staleness(now) <= b);
                if !view.alive || !fresh || !self.link_free(n, view.neighbor) {
                    continue;
                }
                let me = &self.workers[n];
                let inputs = DecisionInputs {
                    output_len: me.output_len(),
                    input_len: me.input_len(),
                    compute_delay: me.compute_delay,
                    remote_input_len: view.effective_input_len(),
                    remote_compute_delay: view.compute_delay,
                    link_delay: view.link_delay(payload),
                };
                if forced {
                    chosen = Some((idx, Branch::Deterministic, 1.0, None, inputs));
                    break;
                }
                match offload_rule(&inputs) {
                    Rule::Offload => {
                        chosen = Some((idx, Branch::Deterministic, 1.0, None, inputs));
                        break;
                    }
                    Rule::OffloadWithProbability(p) => {
                        let draw = self.draws.next();
                        if draw < p {
                            chosen = Some((idx, Branch::Probabilistic, p, Some(draw), inputs));
                            break;
                        }
                    }
                    Rule::Hold => {}
                }
            }
            let Some((idx, branch, p, draw, inputs)) = chosen else {
                return;
            };
            let task = self.workers[n].pop_output().expect("head exists");
            let m = self.views[n][idx].neighbor;
            let delay = transmission_delay(&self.links[n][idx], payload);
            match self.cfg.topology.medium {
                Medium::PerLink => self.link_busy[n][m] = true,
                Medium::Shared => {
                    self.medium_busy = true;
                    self.medium_turn = (n + 1) % self.workers.len();
                }
            }
            self.views[n][idx].in_flight += 1;
            self.last_target[n] = Some(m);
            self.emit(
                LogEntry::new(now, "Offload")
                    .link(n, m)
                    .task(task.datum_id, task.stage)
                    .branch(branch.as_str()),
            );
            self.collector.offloads.push(OffloadRecord {
                time: now,
                from: n,
                to: m,
                datum_id: task.datum_id,
                stage: task.stage,
                branch,
                p,
                draw,
                forced,
                inputs,
            });
            self.schedule(now + delay, EventKind::TxComplete { from: n, to: m, task });
        }
    }

    /// Every admitted datum is in exactly one place: a queue, a worker's
    /// compute slot, a link, a pending or in-flight result, or delivered.
    fn check_conservation(&self) -> Result<(), EngineError> {
        let mut count = vec![0u32; self.admitted() as usize];
        for w in &self.workers {
            for t in w.input_tasks().chain(w.output_tasks()).chain(w.current_task()) {
                count[t.datum_id as usize] += 1;
            }
        }
        for e in &self.heap {
            match &e.kind {
                EventKind::TxComplete { task, .. } => count[task.datum_id as usize] += 1,
                EventKind::ResultDelivered { record } => count[record.datum_id as usize] += 1,
                _ => {}
            }
        }
        for (_, d) in &self.pending_results {
            count[d.task.datum_id as usize] += 1;
        }
        for (id, done) in self.delivered.iter().enumerate() {
            if *done {
                count[id] += 1;
            }
        }
        if let Some(id) = count.iter().position(|&c| c != 1) {
            return Err(EngineError::AuditFailed {
                time: self.now,
                message: format!("datum {id} found in {} places", count[id]),
            });
        }
        Ok(())
    }
}
