//! Offloading of output-queue tasks to one-hop neighbors, driven by
//! periodically refreshed views of the neighbors' queues and delays.

use serde::{Deserialize, Serialize};

/// A link between two workers. Undirected links carry tasks both ways;
/// directed links carry tasks only `from -> to`, the reverse direction being
/// usable for results and control traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: usize,
    pub to: usize,
    /// Seconds.
    pub latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    #[serde(default)]
    pub directed: bool,
}

impl LinkSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(format!("link {}-{}: latency must be >= 0", self.from, self.to));
        }
        if !(self.bandwidth > 0.0) {
            return Err(format!("link {}-{}: bandwidth must be > 0", self.from, self.to));
        }
        if self.from == self.to {
            return Err(format!("link {}-{} is a self loop", self.from, self.to));
        }
        Ok(())
    }

    pub fn carries_tasks(&self, from: usize, to: usize) -> bool {
        (self.from == from && self.to == to) || (!self.directed && self.from == to && self.to == from)
    }

    pub fn connects(&self, a: usize, b: usize) -> bool {
        (self.from == a && self.to == b) || (self.from == b && self.to == a)
    }
}

/// Seconds to push `payload` bytes over `link`.
pub fn transmission_delay(link: &LinkSpec, payload: u64) -> f64 {
    link.latency + payload as f64 / link.bandwidth
}

/// What worker n last learned about neighbor m.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborView {
    pub neighbor: usize,
    /// I_m at observation time.
    pub input_len: usize,
    /// Gamma_m, seconds per task.
    pub compute_delay: f64,
    pub latency: f64,
    pub bandwidth: f64,
    pub observed_at: f64,
    pub alive: bool,
    /// Tasks sent to m and not yet delivered; added to the viewed I_m.
    pub in_flight: usize,
}

impl NeighborView {
    pub fn effective_input_len(&self) -> usize {
        self.input_len + self.in_flight
    }

    /// D_nm for a task of `payload` bytes.
    pub fn link_delay(&self, payload: u64) -> f64 {
        self.latency + payload as f64 / self.bandwidth
    }

    pub fn staleness(&self, now: f64) -> f64 {
        now - self.observed_at
    }

    /// Expected wait if a task of `payload` bytes were sent to m now.
    pub fn remote_wait(&self, payload: u64) -> f64 {
        self.link_delay(payload) + self.effective_input_len() as f64 * self.compute_delay
    }
}

/// Quantities compared by the offloading rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionInputs {
    pub output_len: usize,
    pub input_len: usize,
    pub compute_delay: f64,
    pub remote_input_len: usize,
    pub remote_compute_delay: f64,
    pub link_delay: f64,
}

impl DecisionInputs {
    pub fn local_wait(&self) -> f64 {
        self.input_len as f64 * self.compute_delay
    }

    pub fn remote_wait(&self) -> f64 {
        self.link_delay + self.remote_input_len as f64 * self.remote_compute_delay
    }

    /// `min{I_n G_n / (D_nm + I_m G_m), 1}`; a zero remote wait counts as 1.
    pub fn offload_probability(&self) -> f64 {
        let remote = self.remote_wait();
        if remote <= 0.0 {
            1.0
        } else {
            (self.local_wait() / remote).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[serde(rename = "det")]
    Deterministic,
    #[serde(rename = "prob")]
    Probabilistic,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Deterministic => "det",
            Branch::Probabilistic => "prob",
        }
    }
}

/// Outcome of the rule before any random draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Offload,
    OffloadWithProbability(f64),
    Hold,
}

pub fn offload_rule(inputs: &DecisionInputs) -> Rule {
    if inputs.output_len <= inputs.remote_input_len {
        return Rule::Hold;
    }
    if inputs.local_wait() > inputs.remote_wait() {
        Rule::Offload
    } else {
        Rule::OffloadWithProbability(inputs.offload_probability())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Offload { branch: Branch, probability: f64 },
    Hold,
}

/// The full rule with a uniform draw in [0, 1) for the probabilistic branch.
pub fn offload_decision(inputs: &DecisionInputs, draw: f64) -> Decision {
    match offload_rule(inputs) {
        Rule::Offload => Decision::Offload {
            branch: Branch::Deterministic,
            probability: 1.0,
        },
        Rule::OffloadWithProbability(p) if draw < p => Decision::Offload {
            branch: Branch::Probabilistic,
            probability: p,
        },
        _ => Decision::Hold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborOrder {
    /// Start scanning after the neighbor last offloaded to.
    #[default]
    RoundRobin,
    /// Lowest expected remote wait first.
    BestDelayFirst,
}

/// Order in which neighbors are evaluated for the head-of-line task.
pub fn scan_order(
    views: &[NeighborView],
    last_target: Option<usize>,
    order: NeighborOrder,
    payload: u64,
) -> Vec<usize> {
    let n = views.len();
    if n == 0 {
        return Vec::new();
    }
    match order {
        NeighborOrder::RoundRobin => {
            let start = last_target
                .and_then(|t| views.iter().position(|v| v.neighbor == t))
                .map_or(0, |i| i + 1);
            (0..n).map(|i| (start + i) % n).collect()
        }
        NeighborOrder::BestDelayFirst => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                views[a]
                    .remote_wait(payload)
                    .total_cmp(&views[b].remote_wait(payload))
                    .then(views[a].neighbor.cmp(&views[b].neighbor))
            });
            idx
        }
    }
}

/// One offload as logged for auditing. The CSV form keeps the columns
/// `time,from,to,datum_id,stage,branch,p,draw`; the decision inputs travel
/// alongside for legality checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadRecord {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub datum_id: u64,
    pub stage: usize,
    pub branch: Branch,
    pub p: f64,
    pub draw: Option<f64>,
    /// True for drains of a departing worker, where the rule is waived.
    pub forced: bool,
    pub inputs: DecisionInputs,
}

pub const OFFLOAD_CSV_HEADER: &str = "time,from,to,datum_id,stage,branch,p,draw";

impl OffloadRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.time,
            self.from,
            self.to,
            self.datum_id,
            self.stage,
            self.branch.as_str(),
            self.p,
            self.draw.map(|d| d.to_string()).unwrap_or_default()
        )
    }
}
