use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admission::{ArrivalProcess, ControllerConfig, ControllerMode};
use crate::confidence::{ConfidenceOracle, SyntheticOracle, SyntheticStage, TraceOracle};
use crate::model::ModelSpec;
use crate::offload::{LinkSpec, NeighborOrder};

use super::topology::{built_in_topology, Topology, SOURCE};
use super::EngineError;

/// Deserializes JSON, prefixing errors with the path of the offending field.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, EngineError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            EngineError::ConfigInvalid(inner.to_string())
        } else {
            EngineError::ConfigInvalid(format!("{path}: {inner}"))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medium {
    /// Each directed link carries one transmission at a time.
    #[default]
    PerLink,
    /// One transmission at a time across the whole network, as on a single
    /// wireless channel.
    Shared,
}

fn default_latency() -> f64 {
    0.005
}

fn default_bandwidth() -> f64 {
    2.5e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// A built-in name (`local`, `two_node`, `mesh3`, `circular3`, `mesh5`)
    /// or `custom`.
    pub name: String,
    #[serde(default = "default_latency")]
    pub latency: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub medium: Medium,
    /// Required for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_workers: Option<usize>,
    /// Required for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkSpec>>,
}

impl TopologyConfig {
    pub fn builtin(name: &str) -> Self {
        TopologyConfig {
            name: name.to_string(),
            latency: default_latency(),
            bandwidth: default_bandwidth(),
            medium: Medium::PerLink,
            num_workers: None,
            links: None,
        }
    }

    pub fn resolve(&self) -> Result<Topology, EngineError> {
        if self.name == "custom" {
            let n = self.num_workers.ok_or_else(|| {
                EngineError::ConfigInvalid("topology.num_workers is required for custom topologies".into())
            })?;
            let links = self
                .links
                .clone()
                .ok_or_else(|| EngineError::ConfigInvalid("topology.links is required for custom topologies".into()))?;
            let t = Topology {
                name: "custom".into(),
                num_workers: n,
                links,
            };
            t.validate().map_err(EngineError::ConfigInvalid)?;
            Ok(t)
        } else {
            if self.links.is_some() || self.num_workers.is_some() {
                return Err(EngineError::ConfigInvalid(format!(
                    "topology.links/num_workers only apply to custom topologies, not '{}'",
                    self.name
                )));
            }
            let t = built_in_topology(&self.name, self.latency, self.bandwidth)?;
            t.validate().map_err(EngineError::ConfigInvalid)?;
            Ok(t)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    Synthetic {
        stages: Vec<SyntheticStage>,
    },
    /// CSV trace; relative paths resolve against the config file's directory.
    Trace {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnAction {
    Join,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnSpec {
    pub time: f64,
    pub worker: usize,
    pub action: ChurnAction,
}

/// Per-worker compute delay: one value for all workers or one per worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComputeDelays {
    Uniform(f64),
    PerWorker(Vec<f64>),
}

fn default_output_threshold() -> usize {
    50
}

fn default_gossip_period() -> f64 {
    0.1
}

fn default_sample_period() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub topology: TopologyConfig,
    /// Gamma_n in seconds per unit of stage compute weight.
    pub compute_delay: ComputeDelays,
    pub model: ModelSpec,
    /// Size of a raw input item in bytes.
    pub input_bytes: u64,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    /// T_O.
    #[serde(default = "default_output_threshold")]
    pub output_queue_threshold: usize,
    /// Initial (or fixed) early-exit threshold for every stage.
    pub initial_threshold: f64,
    pub arrivals: ArrivalProcess,
    /// Stop admitting data after this many seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// Stop admitting data after this many items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_data: Option<u64>,
    /// Seconds excluded from steady-state statistics; 10% of the run by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    #[serde(default = "default_gossip_period")]
    pub gossip_period: f64,
    #[serde(default)]
    pub gossip_bytes: u64,
    /// Bytes of a result message; `num_classes * 4` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_bytes: Option<u64>,
    /// Queue sampling period in seconds; 0 disables sampling.
    #[serde(default = "default_sample_period")]
    pub queue_sample_period: f64,
    #[serde(default)]
    pub neighbor_order: NeighborOrder,
    /// Views older than this are not used for offloading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staleness_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub churn: Vec<ChurnSpec>,
    /// Replaces the seeded offload draws with this cycled sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_draws: Option<Vec<f64>>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        parse_json(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 prefix of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn compute_delays(&self, num_workers: usize) -> Vec<f64> {
        match &self.compute_delay {
            ComputeDelays::Uniform(g) => vec![*g; num_workers],
            ComputeDelays::PerWorker(v) => v.clone(),
        }
    }

    pub fn result_bytes(&self) -> u64 {
        self.result_bytes.unwrap_or(self.model.num_classes() as u64 * 4)
    }

    /// Workers that first appear through a join event start absent.
    pub fn initially_present(&self, num_workers: usize) -> Vec<bool> {
        let mut present = vec![true; num_workers];
        let mut seen = vec![false; num_workers];
        let mut churn = self.churn.clone();
        churn.sort_by(|a, b| a.time.total_cmp(&b.time));
        for c in churn {
            if c.worker < num_workers && !seen[c.worker] {
                seen[c.worker] = true;
                present[c.worker] = c.action == ChurnAction::Leave;
            }
        }
        present
    }

    pub fn validate(&self) -> Result<Topology, EngineError> {
        let bad = |m: String| Err(EngineError::ConfigInvalid(m));
        let topo = self.topology.resolve()?;
        let n = topo.num_workers;
        let delays = self.compute_delays(n);
        if delays.len() != n {
            return bad(format!("compute_delay lists {} values for {} workers", delays.len(), n));
        }
        if let Some(g) = delays.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return bad(format!("compute_delay must be positive, got {g}"));
        }
        if !(0.0..=1.0).contains(&self.initial_threshold) {
            return bad(format!(
                "initial_threshold must lie in [0, 1], got {}",
                self.initial_threshold
            ));
        }
        self.controller.validate().map_err(EngineError::ConfigInvalid)?;
        self.arrivals.validate().map_err(EngineError::ConfigInvalid)?;
        if self.controller.mode == ControllerMode::RateAdaptation
            && !matches!(self.arrivals, ArrivalProcess::Adaptive { .. })
        {
            return bad("rate adaptation requires arrivals.kind = adaptive".into());
        }
        if self.duration.is_none() && self.max_data.is_none() {
            return bad("one of duration or max_data is required".into());
        }
        if let Some(d) = self.duration {
            if !(d > 0.0 && d.is_finite()) {
                return bad("duration must be positive".into());
            }
        }
        if let Some(w) = self.warmup {
            if !(w >= 0.0) {
                return bad("warmup must be non-negative".into());
            }
        }
        if !(self.gossip_period > 0.0) {
            return bad("gossip_period must be positive".into());
        }
        if !(self.queue_sample_period >= 0.0) {
            return bad("queue_sample_period must be non-negative".into());
        }
        if let Some(s) = self.staleness_bound {
            if !(s >= 0.0) {
                return bad("staleness_bound must be non-negative".into());
            }
        }
        if let OracleConfig::Synthetic { stages } = &self.oracle {
            if stages.len() != self.model.num_stages() {
                return bad(format!(
                    "oracle.stages has {} entries, model has {} stages",
                    stages.len(),
                    self.model.num_stages()
                ));
            }
        }
        for c in &self.churn {
            if c.worker >= n {
                return bad(format!("churn references unknown worker {}", c.worker));
            }
            if c.worker == SOURCE && c.action == ChurnAction::Leave {
                return Err(EngineError::SourceCannotLeave);
            }
            if !(c.time >= 0.0) {
                return bad("churn time must be non-negative".into());
            }
        }
        if let Some(d) = &self.scripted_draws {
            if d.is_empty() || d.iter().any(|x| !(0.0..1.0).contains(x)) {
                return bad("scripted_draws must be a nonempty list of values in [0, 1)".into());
            }
        }
        let present = self.initially_present(n);
        if !present[SOURCE] {
            return bad("the source must be present at t = 0".into());
        }
        if !topo.connected(&present) {
            return bad("topology is not connected at t = 0".into());
        }
        Ok(topo)
    }

    /// Builds the configured oracle, resolving trace paths against `base_dir`.
    pub fn build_oracle(&self, base_dir: Option<&Path>) -> Result<Box<dyn ConfidenceOracle>, EngineError> {
        let oracle: Box<dyn ConfidenceOracle> = match &self.oracle {
            OracleConfig::Synthetic { stages } => Box::new(SyntheticOracle::new(
                stages.clone(),
                self.model.num_classes(),
                self.seed,
            )?),
            OracleConfig::Trace { path } => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Box::new(TraceOracle::load(full)?)
            }
        };
        if oracle.num_stages() != self.model.num_stages() || oracle.num_classes() != self.model.num_classes() {
            return Err(EngineError::ConfigInvalid(format!(
                "oracle is {} stages x {} classes, model is {} x {}",
                oracle.num_stages(),
                oracle.num_classes(),
                self.model.num_stages(),
                self.model.num_classes()
            )));
        }
        Ok(oracle)
    }
}
