//! Softmax and max-probability confidence, plus the oracles that stand in for
//! real exit classifiers by supplying logits per (datum, exit).

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("empty logit vector")]
    EmptyVector,
    #[error("non-finite logit at index {0}")]
    NonFiniteInput(usize),
    #[error("target confidence {c} must lie strictly between 1/{v} and 1")]
    ConfidenceOutOfRange { c: f64, v: usize },
    #[error("label {label} out of range for {v} classes")]
    LabelOutOfRange { label: usize, v: usize },
    #[error("trace parse error: {0}")]
    ParseError(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown datum {0}")]
    UnknownDatum(u64),
    #[error("unknown stage {stage} for datum {datum}")]
    UnknownStage { datum: u64, stage: usize },
    #[error("invalid oracle parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raw classifier output at one exit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ConfidenceError> {
        if values.is_empty() {
            return Err(ConfidenceError::EmptyVector);
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(ConfidenceError::NonFiniteInput(i));
        }
        Ok(LogitVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confidence {
    pub value: f64,
    pub label: usize,
}

/// Softmax with max subtraction, so large logits do not overflow.
pub fn softmax(logits: &[f64]) -> Result<ProbabilityVector, ConfidenceError> {
    if logits.is_empty() {
        return Err(ConfidenceError::EmptyVector);
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(ConfidenceError::NonFiniteInput(i));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbabilityVector(exps.into_iter().map(|e| e / total).collect()))
}

/// Largest class probability and the lowest index attaining it.
pub fn confidence(probs: &ProbabilityVector) -> Confidence {
    let mut best = Confidence {
        value: f64::NEG_INFINITY,
        label: 0,
    };
    for (i, &p) in probs.0.iter().enumerate() {
        if p > best.value {
            best = Confidence { value: p, label: i };
        }
    }
    best
}

/// Softmax followed by [`confidence`].
pub fn evaluate(logits: &LogitVector) -> Confidence {
    // LogitVector is validated on construction.
    confidence(&softmax(logits.values()).expect("validated logits"))
}

/// Logits whose softmax peaks at `label` with probability exactly `c`: the
/// label gets `ln(c (v - 1) / (1 - c))`, every other class 0.
pub fn construct_logits(c: f64, label: usize, v: usize) -> Result<LogitVector, ConfidenceError> {
    if label >= v {
        return Err(ConfidenceError::LabelOutOfRange { label, v });
    }
    if !(c.is_finite() && c > 1.0 / v as f64 && c < 1.0) {
        return Err(ConfidenceError::ConfidenceOutOfRange { c, v });
    }
    let mut values = vec![0.0; v];
    values[label] = (c * (v as f64 - 1.0) / (1.0 - c)).ln();
    LogitVector::new(values)
}

/// Source of classifier outputs in place of a real forward pass.
pub trait ConfidenceOracle: Send + Sync {
    fn num_stages(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn logits_for(&self, datum_id: u64, stage: usize) -> Result<LogitVector, ConfidenceError>;
    fn truth(&self, datum_id: u64) -> Result<usize, ConfidenceError>;
}

/// Oracle replaying recorded logits from a CSV trace.
///
/// Header `datum_id,truth,s1_l0,...,s1_l{v-1},s2_l0,...`; one row per datum,
/// logits stage-major.
#[derive(Debug, Clone)]
pub struct TraceOracle {
    stages: usize,
    classes: usize,
    rows: BTreeMap<u64, (usize, Vec<f64>)>,
}

fn trace_header(stages: usize, classes: usize) -> Vec<String> {
    let mut header = vec!["datum_id".to_string(), "truth".to_string()];
    for k in 1..=stages {
        for l in 0..classes {
            header.push(format!("s{k}_l{l}"));
        }
    }
    header
}

fn dims_from_header(header: &csv::StringRecord) -> Result<(usize, usize), ConfidenceError> {
    if header.len() < 3 || &header[0] != "datum_id" || &header[1] != "truth" {
        return Err(ConfidenceError::ParseError(
            "header must start with datum_id,truth".into(),
        ));
    }
    let last = &header[header.len() - 1];
    let parsed = last
        .strip_prefix('s')
        .and_then(|rest| rest.split_once("_l"))
        .and_then(|(k, l)| Some((k.parse::<usize>().ok()?, l.parse::<usize>().ok()? + 1)));
    let (stages, classes) =
        parsed.ok_or_else(|| ConfidenceError::ParseError(format!("cannot read dimensions from column '{last}'")))?;
    let expected = trace_header(stages, classes);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(ConfidenceError::DimensionMismatch(format!(
            "header does not match {stages} stages x {classes} classes"
        )));
    }
    Ok((stages, classes))
}

impl TraceOracle {
    pub fn from_rows(
        stages: usize,
        classes: usize,
        rows: impl IntoIterator<Item = (u64, usize, Vec<f64>)>,
    ) -> Result<Self, ConfidenceError> {
        let mut map = BTreeMap::new();
        for (id, truth, logits) in rows {
            if logits.len() != stages * classes {
                return Err(ConfidenceError::DimensionMismatch(format!(
                    "datum {id}: {} logits, expected {}",
                    logits.len(),
                    stages * classes
                )));
            }
            if truth >= classes {
                return Err(ConfidenceError::LabelOutOfRange {
                    label: truth,
                    v: classes,
                });
            }
            if map.insert(id, (truth, logits)).is_some() {
                return Err(ConfidenceError::ParseError(format!("duplicate datum {id}")));
            }
        }
        Ok(TraceOracle {
            stages,
            classes,
            rows: map,
        })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, ConfidenceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| ConfidenceError::ParseError(e.to_string()))?
            .clone();
        let (stages, classes) = dims_from_header(&header)?;
        let width = 2 + stages * classes;
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ConfidenceError::ParseError(e.to_string()))?;
            if rec.len() != width {
                return Err(ConfidenceError::DimensionMismatch(format!(
                    "row {}: {} fields, expected {width}",
                    line + 1,
                    rec.len()
                )));
            }
            let field = |i: usize| -> Result<f64, ConfidenceError> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| ConfidenceError::ParseError(format!("row {} column {}: {e}", line + 1, i)))
            };
            let id = rec[0]
                .parse::<u64>()
                .map_err(|e| ConfidenceError::ParseError(format!("row {} datum_id: {e}", line + 1)))?;
            let truth = rec[1]
                .parse::<usize>()
                .map_err(|e| ConfidenceError::ParseError(format!("row {} truth: {e}", line + 1)))?;
            let logits = (2..width).map(field).collect::<Result<Vec<_>, _>>()?;
            if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
                return Err(ConfidenceError::NonFiniteInput(i));
            }
            rows.push((id, truth, logits));
        }
        Self::from_rows(stages, classes, rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfidenceError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), ConfidenceError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| ConfidenceError::ParseError(e.to_string());
        w.write_record(trace_header(self.stages, self.classes)).map_err(io)?;
        for (id, (truth, logits)) in &self.rows {
            let mut rec = vec![id.to_string(), truth.to_string()];
            rec.extend(logits.iter().map(|x| x.to_string()));
            w.write_record(rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn datum_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.rows.keys().copied()
    }
}

impl ConfidenceOracle for TraceOracle {
    fn num_stages(&self) -> usize {
        self.stages
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits_for(&self, datum_id: u64, stage: usize) -> Result<LogitVector, ConfidenceError> {
        let (_, logits) = self
            .rows
            .get(&datum_id)
            .ok_or(ConfidenceError::UnknownDatum(datum_id))?;
        if stage == 0 || stage > self.stages {
            return Err(ConfidenceError::UnknownStage { datum: datum_id, stage });
        }
        let start = (stage - 1) * self.classes;
        LogitVector::new(logits[start..start + self.classes].to_vec())
    }

    fn truth(&self, datum_id: u64) -> Result<usize, ConfidenceError> {
        self.rows
            .get(&datum_id)
            .map(|(t, _)| *t)
            .ok_or(ConfidenceError::UnknownDatum(datum_id))
    }
}

/// Per-exit behavior of the synthetic oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStage {
    /// Confidence is drawn from Beta(beta_a, beta_b) rescaled into (1/v, 1).
    pub beta_a: f64,
    pub beta_b: f64,
    /// Probability that the exit's top label is the true one.
    pub p_correct: f64,
}

/// Oracle drawing confidences and correctness from per-stage distributions,
/// keyed by (seed, datum, stage) so every lookup is reproducible.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    stages: Vec<(SyntheticStage, Beta<f64>)>,
    classes: usize,
    seed: u64,
}

const EDGE: f64 = 1e-9;

impl SyntheticOracle {
    pub fn new(stages: Vec<SyntheticStage>, classes: usize, seed: u64) -> Result<Self, ConfidenceError> {
        if classes < 2 {
            return Err(ConfidenceError::InvalidParams(
                "synthetic oracle needs at least two classes".into(),
            ));
        }
        if stages.is_empty() {
            return Err(ConfidenceError::InvalidParams("no stages".into()));
        }
        let stages = stages
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if !(s.p_correct >= 0.0 && s.p_correct <= 1.0) {
                    return Err(ConfidenceError::InvalidParams(format!(
                        "stage {}: p_correct {} outside [0, 1]",
                        i + 1,
                        s.p_correct
                    )));
                }
                let beta = Beta::new(s.beta_a, s.beta_b)
                    .map_err(|e| ConfidenceError::InvalidParams(format!("stage {}: {e}", i + 1)))?;
                if !(s.beta_a > 0.0 && s.beta_b > 0.0) {
                    return Err(ConfidenceError::InvalidParams(format!(
                        "stage {}: beta parameters must be positive",
                        i + 1
                    )));
                }
                Ok((s, beta))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SyntheticOracle { stages, classes, seed })
    }

    pub fn stage_params(&self) -> impl Iterator<Item = &SyntheticStage> {
        self.stages.iter().map(|(s, _)| s)
    }
}

impl ConfidenceOracle for SyntheticOracle {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits_for(&self, datum_id: u64, stage: usize) -> Result<LogitVector, ConfidenceError> {
        if stage == 0 || stage > self.stages.len() {
            return Err(ConfidenceError::UnknownStage { datum: datum_id, stage });
        }
        let (params, beta) = &self.stages[stage - 1];
        let mut rng = rng::keyed(self.seed, Stream::Oracle, &[datum_id, stage as u64]);
        let v = self.classes as f64;
        let x = beta.sample(&mut rng);
        let c = (1.0 / v + (1.0 - 1.0 / v) * x).clamp(1.0 / v + EDGE, 1.0 - EDGE);
        let truth = self.truth(datum_id)?;
        let label = if rng.random::<f64>() < params.p_correct {
            truth
        } else {
            let wrong = rng.random_range(0..self.classes - 1);
            if wrong >= truth {
                wrong + 1
            } else {
                wrong
            }
        };
        construct_logits(c, label, self.classes)
    }

    fn truth(&self, datum_id: u64) -> Result<usize, ConfidenceError> {
        let mut rng = rng::keyed(self.seed, Stream::Oracle, &[datum_id, 0]);
        Ok(rng.random_range(0..self.classes))
    }
}
