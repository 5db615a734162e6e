//! Partitioned-model description: stages between exit points, the data items
//! fed into the model and the tasks that carry them from stage to stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("exit layers must be strictly increasing and end at the last layer: {0}")]
    NonContiguousPartition(String),
    #[error("number of exits ({exits}) must be smaller than the number of layers ({layers})")]
    KNotLessThanL { exits: usize, layers: usize },
    #[error("stage {0} contains no layers")]
    EmptyStage(usize),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// One block of layers terminated by an exit classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    /// 1-based stage index.
    pub index: usize,
    pub first_layer: usize,
    pub last_layer: usize,
    /// Per-worker task delay is `compute_delay * compute_weight`.
    pub compute_weight: f64,
    /// Size of the stage's output feature vector on the wire.
    pub output_feature_bytes: u64,
}

impl StageSpec {
    pub fn num_layers(&self) -> usize {
        self.last_layer - self.first_layer + 1
    }
}

/// Size-reducing transform on the feature vector leaving a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub stage_index: usize,
    pub compressed_bytes: u64,
    /// Probability that a correct classification made at a later exit is
    /// turned into a wrong one.
    pub accuracy_penalty: f64,
}

/// JSON form of a model: `{"total_layers", "num_classes", "exit_layers",
/// "compute_weights", "feature_bytes", "compressors"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub total_layers: usize,
    pub num_classes: usize,
    pub exit_layers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_weights: Option<Vec<f64>>,
    pub feature_bytes: Vec<u64>,
    #[serde(default)]
    pub compressors: Vec<CompressorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct ModelSpec {
    total_layers: usize,
    num_classes: usize,
    stages: Vec<StageSpec>,
    compressors: Vec<CompressorSpec>,
}

impl TryFrom<ModelDoc> for ModelSpec {
    type Error = ModelError;

    fn try_from(doc: ModelDoc) -> Result<Self, ModelError> {
        let mut spec = build_partition(doc.total_layers, &doc.exit_layers, doc.num_classes, &doc.feature_bytes)?;
        if let Some(weights) = doc.compute_weights {
            spec = spec.with_compute_weights(&weights)?;
        }
        for c in doc.compressors {
            spec = spec.with_compressor(c)?;
        }
        Ok(spec)
    }
}

impl From<ModelSpec> for ModelDoc {
    fn from(spec: ModelSpec) -> Self {
        ModelDoc {
            total_layers: spec.total_layers,
            num_classes: spec.num_classes,
            exit_layers: spec.stages.iter().map(|s| s.last_layer).collect(),
            compute_weights: Some(spec.stages.iter().map(|s| s.compute_weight).collect()),
            feature_bytes: spec.stages.iter().map(|s| s.output_feature_bytes).collect(),
            compressors: spec.compressors,
        }
    }
}

/// Splits `total_layers` at the given exit layers. Every stage gets compute
/// weight 1; use [`ModelSpec::with_compute_weights`] to override.
pub fn build_partition(
    total_layers: usize,
    exit_layers: &[usize],
    num_classes: usize,
    feature_sizes: &[u64],
) -> Result<ModelSpec, ModelError> {
    if num_classes == 0 {
        return Err(ModelError::Invalid("num_classes must be positive".into()));
    }
    if exit_layers.is_empty() {
        return Err(ModelError::EmptyStage(1));
    }
    if exit_layers.len() >= total_layers {
        return Err(ModelError::KNotLessThanL {
            exits: exit_layers.len(),
            layers: total_layers,
        });
    }
    if feature_sizes.len() != exit_layers.len() {
        return Err(ModelError::Invalid(format!(
            "{} feature sizes given for {} stages",
            feature_sizes.len(),
            exit_layers.len()
        )));
    }
    if exit_layers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ModelError::NonContiguousPartition(format!("{exit_layers:?}")));
    }
    if *exit_layers.last().unwrap() != total_layers {
        return Err(ModelError::NonContiguousPartition(format!(
            "last exit {} != total layers {}",
            exit_layers.last().unwrap(),
            total_layers
        )));
    }
    if exit_layers[0] == 0 {
        return Err(ModelError::EmptyStage(1));
    }

    let mut stages = Vec::with_capacity(exit_layers.len());
    let mut first = 1;
    for (i, (&last, &bytes)) in exit_layers.iter().zip(feature_sizes).enumerate() {
        if bytes == 0 {
            return Err(ModelError::Invalid(format!(
                "stage {} output feature size must be positive",
                i + 1
            )));
        }
        stages.push(StageSpec {
            index: i + 1,
            first_layer: first,
            last_layer: last,
            compute_weight: 1.0,
            output_feature_bytes: bytes,
        });
        first = last + 1;
    }

    Ok(ModelSpec {
        total_layers,
        num_classes,
        stages,
        compressors: Vec::new(),
    })
}

impl ModelSpec {
    pub fn with_compute_weights(mut self, weights: &[f64]) -> Result<Self, ModelError> {
        if weights.len() != self.stages.len() {
            return Err(ModelError::Invalid(format!(
                "{} compute weights given for {} stages",
                weights.len(),
                self.stages.len()
            )));
        }
        for (stage, &w) in self.stages.iter_mut().zip(weights) {
            if !(w.is_finite() && w > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "compute weight of stage {} must be positive, got {w}",
                    stage.index
                )));
            }
            stage.compute_weight = w;
        }
        Ok(self)
    }

    pub fn with_compressor(mut self, c: CompressorSpec) -> Result<Self, ModelError> {
        let k = self.num_stages();
        if c.stage_index == 0 || c.stage_index >= k {
            return Err(ModelError::Invalid(format!(
                "compressor stage {} outside 1..{}",
                c.stage_index,
                k - 1
            )));
        }
        let stage = &self.stages[c.stage_index - 1];
        if c.compressed_bytes >= stage.output_feature_bytes {
            return Err(ModelError::Invalid(format!(
                "compressor at stage {} does not shrink {} bytes (got {})",
                c.stage_index, stage.output_feature_bytes, c.compressed_bytes
            )));
        }
        if !(0.0..=1.0).contains(&c.accuracy_penalty) {
            return Err(ModelError::Invalid(format!(
                "accuracy penalty {} outside [0, 1]",
                c.accuracy_penalty
            )));
        }
        if self.compressors.iter().any(|x| x.stage_index == c.stage_index) {
            return Err(ModelError::Invalid(format!(
                "duplicate compressor at stage {}",
                c.stage_index
            )));
        }
        self.compressors.push(c);
        self.compressors.sort_by_key(|c| c.stage_index);
        Ok(self)
    }

    pub fn without_compressors(mut self) -> Self {
        self.compressors.clear();
        self
    }

    pub fn total_layers(&self) -> usize {
        self.total_layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of exit points, K.
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    /// Stage by 1-based index.
    pub fn stage(&self, k: usize) -> &StageSpec {
        &self.stages[k - 1]
    }

    pub fn compressors(&self) -> &[CompressorSpec] {
        &self.compressors
    }

    pub fn compressor_at(&self, k: usize) -> Option<&CompressorSpec> {
        self.compressors.iter().find(|c| c.stage_index == k)
    }

    /// Bytes that leave stage `k` toward stage `k + 1`.
    pub fn wire_bytes(&self, k: usize) -> u64 {
        match self.compressor_at(k) {
            Some(c) => c.compressed_bytes,
            None => self.stage(k).output_feature_bytes,
        }
    }

    /// Compressors whose output is consumed before exit `k`; their penalties
    /// apply to a classification made there.
    pub fn penalties_before(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.compressors
            .iter()
            .filter(move |c| c.stage_index < k)
            .map(|c| c.accuracy_penalty)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// The `d`th input item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    pub id: u64,
    pub arrival_time: f64,
    pub input_bytes: u64,
    pub truth_label: Option<usize>,
}

/// Processing of one stage's layers for one datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub datum_id: u64,
    pub stage: usize,
    pub payload_bytes: u64,
    pub created_at: f64,
    pub hop_count: u32,
}

impl Task {
    pub fn first(datum: &Datum) -> Self {
        Task {
            datum_id: datum.id,
            stage: 1,
            payload_bytes: datum.input_bytes,
            created_at: datum.arrival_time,
            hop_count: 0,
        }
    }
}

/// Task for the next stage of the same datum, or `None` after the last stage.
pub fn successor_task(model: &ModelSpec, task: &Task) -> Option<Task> {
    if task.stage >= model.num_stages() {
        return None;
    }
    Some(Task {
        datum_id: task.datum_id,
        stage: task.stage + 1,
        payload_bytes: model.wire_bytes(task.stage),
        created_at: task.created_at,
        hop_count: task.hop_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub datum_id: u64,
    pub exit_stage: usize,
    pub confidence: f64,
    pub predicted_label: usize,
    pub correct: bool,
    pub arrival_time: f64,
    pub completion_time: f64,
    pub end_to_end_latency: f64,
    /// Worker that made the exit decision.
    pub exit_worker: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(stage: usize) -> Task {
        Task {
            datum_id: 7,
            stage,
            payload_bytes: 10,
            created_at: 0.0,
            hop_count: 0,
        }
    }

    #[test]
    fn ten_layers_three_exits() {
        let m = build_partition(10, &[3, 7, 10], 10, &[100, 50, 40]).unwrap();
        assert_eq!(m.num_stages(), 3);
        let ranges: Vec<_> = m.stages().iter().map(|s| (s.first_layer, s.last_layer)).collect();
        assert_eq!(ranges, vec![(1, 3), (4, 7), (8, 10)]);
        assert!(m.stages().iter().all(|s| s.compute_weight == 1.0));
    }

    #[test]
    fn five_exit_mobilenet_like() {
        let m = build_partition(53, &[8, 18, 30, 44, 53], 10, &[1; 5]).unwrap();
        assert_eq!(m.num_stages(), 5);
        assert_eq!(m.stages().iter().map(StageSpec::num_layers).sum::<usize>(), 53);
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(matches!(
            build_partition(10, &[3, 3, 10], 10, &[1, 1, 1]),
            Err(ModelError::NonContiguousPartition(_))
        ));
        assert!(matches!(
            build_partition(10, &[3, 7], 10, &[1, 1]),
            Err(ModelError::NonContiguousPartition(_))
        ));
        assert!(matches!(
            build_partition(3, &[1, 2, 3], 10, &[1, 1, 1]),
            Err(ModelError::KNotLessThanL { .. })
        ));
        assert!(matches!(
            build_partition(3, &[], 10, &[]),
            Err(ModelError::EmptyStage(1))
        ));
        assert!(matches!(
            build_partition(3, &[0, 3], 10, &[1, 1]),
            Err(ModelError::NonContiguousPartition(_)) | Err(ModelError::EmptyStage(_))
        ));
    }

    #[test]
    fn successor_chain() {
        let m = build_partition(10, &[3, 7, 10], 10, &[100, 50, 40]).unwrap();
        let next = successor_task(&m, &task(2)).unwrap();
        assert_eq!((next.datum_id, next.stage, next.payload_bytes), (7, 3, 50));
        assert!(successor_task(&m, &task(3)).is_none());
    }

    #[test]
    fn compressor_shrinks_wire_size() {
        let m = build_partition(50, &[10, 30, 50], 10, &[3_200_000, 800_000, 40])
            .unwrap()
            .with_compressor(CompressorSpec {
                stage_index: 1,
                compressed_bytes: 13_300,
                accuracy_penalty: 0.022,
            })
            .unwrap();
        let next = successor_task(&m, &task(1)).unwrap();
        assert_eq!(next.payload_bytes, 13_300);
        assert_eq!(m.penalties_before(1).count(), 0);
        assert_eq!(m.penalties_before(2).collect::<Vec<_>>(), vec![0.022]);
    }

    #[test]
    fn compressor_must_shrink() {
        let m = build_partition(10, &[3, 7, 10], 10, &[100, 50, 40]).unwrap();
        let bad = CompressorSpec {
            stage_index: 1,
            compressed_bytes: 100,
            accuracy_penalty: 0.0,
        };
        assert!(m.clone().with_compressor(bad).is_err());
        let last = CompressorSpec {
            stage_index: 3,
            compressed_bytes: 1,
            accuracy_penalty: 0.0,
        };
        assert!(m.with_compressor(last).is_err());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"total_layers": 10, "num_classes": 10, "exit_layers": [3, 7, 10],
            "compute_weights": [1.0, 2.0, 1.5], "feature_bytes": [100, 50, 40],
            "compressors": [{"stage_index": 1, "compressed_bytes": 10, "accuracy_penalty": 0.01}]}"#;
        let m = ModelSpec::from_json(text).unwrap();
        assert_eq!(m.stage(2).compute_weight, 2.0);
        assert_eq!(m.wire_bytes(1), 10);
        let again: ModelSpec = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, again);
        assert!(ModelSpec::from_json(
            r#"{"total_layers": 10, "num_classes": 10, "exit_layers": [3, 3, 10], "feature_bytes": [1,1,1]}"#
        )
        .is_err());
    }
}
