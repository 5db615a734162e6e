use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{ResultRecord, Task};

#[derive(Debug, Clone)]
pub enum EventKind {
    Arrival { generation: u64 },
    ComputeComplete { worker: usize },
    TxComplete { from: usize, to: usize, task: Task },
    ControllerWake { worker: usize },
    GossipTick,
    ChurnJoin { worker: usize },
    ChurnLeave { worker: usize },
    ResultDelivered { record: ResultRecord },
    QueueSample,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Arrival { .. } => "Arrival",
            EventKind::ComputeComplete { .. } => "ComputeComplete",
            EventKind::TxComplete { .. } => "TxComplete",
            EventKind::ControllerWake { .. } => "ControllerWake",
            EventKind::GossipTick => "GossipTick",
            EventKind::ChurnJoin { .. } => "ChurnJoin",
            EventKind::ChurnLeave { .. } => "ChurnLeave",
            EventKind::ResultDelivered { .. } => "ResultDelivered",
            EventKind::QueueSample => "QueueSample",
        }
    }

    /// Events that move data forward, as opposed to periodic bookkeeping.
    pub fn is_progress(&self) -> bool {
        !matches!(
            self,
            EventKind::ControllerWake { .. } | EventKind::GossipTick | EventKind::QueueSample
        )
    }
}

/// Dispatched in `(time, seq)` order; `seq` is assigned when scheduling.
#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One line of the newline-delimited JSON event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: f64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datum: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
}

impl LogEntry {
    pub fn new(t: f64, kind: &str) -> Self {
        LogEntry {
            t,
            kind: kind.to_string(),
            worker: None,
            from: None,
            to: None,
            datum: None,
            stage: None,
            branch: None,
        }
    }

    pub fn worker(mut self, w: usize) -> Self {
        self.worker = Some(w);
        self
    }

    pub fn link(mut self, from: usize, to: usize) -> Self {
        self.from = Some(from);
        self.to = Some(to);
        self
    }

    pub fn task(mut self, datum: u64, stage: usize) -> Self {
        self.datum = Some(datum);
        self.stage = Some(stage);
        self
    }

    pub fn datum(mut self, datum: u64) -> Self {
        self.datum = Some(datum);
        self
    }

    pub fn branch(mut self, b: &str) -> Self {
        self.branch = Some(b.to_string());
        self
    }

    /// Same kind and fields, times within `tol`.
    pub fn matches(&self, other: &LogEntry, tol: f64) -> bool {
        (self.t - other.t).abs() <= tol
            && self.kind == other.kind
            && self.worker == other.worker
            && self.from == other.from
            && self.to == other.to
            && self.datum == other.datum
            && self.stage == other.stage
            && self.branch == other.branch
    }
}
