//! Per-worker execution: take the head-of-line input task, run it, decide
//! between early exit and creating the next task, and place that task in the
//! input or output queue.

use std::collections::VecDeque;

use thiserror::Error;

use crate::confidence::{self, ConfidenceError, ConfidenceOracle};
use crate::model::{successor_task, ModelSpec, Task};

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("worker {0} has departed")]
    WorkerDeparted(usize),
    #[error("oracle lookup failed: {0}")]
    OracleMiss(#[from] ConfidenceError),
    #[error("worker {0} completed a task it was not running")]
    NotBusy(usize),
}

/// A classification that ends inference for a datum.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitDecision {
    pub task: Task,
    pub confidence: f64,
    pub predicted_label: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Exit(ExitDecision),
    EnqueuedInput(Task),
    EnqueuedOutput(Task),
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    /// Seconds per unit of stage compute weight.
    pub compute_delay: f64,
    pub output_threshold: usize,
    input: VecDeque<Task>,
    output: VecDeque<Task>,
    thresholds: Vec<f64>,
    current: Option<Task>,
    alive: bool,
    leaving: bool,
}

impl WorkerState {
    pub fn new(id: usize, compute_delay: f64, stages: usize, threshold: f64, output_threshold: usize) -> Self {
        assert!(compute_delay > 0.0, "compute delay must be positive");
        WorkerState {
            id,
            compute_delay,
            output_threshold,
            input: VecDeque::new(),
            output: VecDeque::new(),
            thresholds: vec![threshold; stages],
            current: None,
            alive: true,
            leaving: false,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub fn output_len(&self) -> usize {
        self.output.len()
    }

    pub fn queued(&self) -> usize {
        self.input.len() + self.output.len()
    }

    pub fn is_busy(&self) -> bool {
        self.current.is_some()
    }

    pub fn current_task(&self) -> Option<&Task> {
        self.current.as_ref()
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    pub fn is_leaving(&self) -> bool {
        self.leaving
    }

    /// Alive and not draining toward departure.
    pub fn accepts_tasks(&self) -> bool {
        self.alive && !self.leaving
    }

    pub fn input_tasks(&self) -> impl Iterator<Item = &Task> {
        self.input.iter()
    }

    pub fn output_tasks(&self) -> impl Iterator<Item = &Task> {
        self.output.iter()
    }

    pub fn threshold(&self, stage: usize) -> f64 {
        self.thresholds[stage - 1]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Assigns the same exit threshold to every stage.
    pub fn set_threshold(&mut self, value: f64) {
        self.thresholds.iter_mut().for_each(|t| *t = value);
    }

    pub fn set_stage_thresholds(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.thresholds.len());
        self.thresholds.copy_from_slice(values);
    }

    /// Starts the head-of-line input task if idle. Returns the completion time.
    pub fn start_next_task(&mut self, now: f64, model: &ModelSpec) -> Option<(f64, Task)> {
        if !self.alive || self.leaving || self.current.is_some() {
            return None;
        }
        let task = self.input.pop_front()?;
        let done = now + self.compute_delay * model.stage(task.stage).compute_weight;
        self.current = Some(task.clone());
        Some((done, task))
    }

    /// Finishes the running task: exit if this is the last stage or the
    /// confidence strictly exceeds the stage threshold, otherwise queue the
    /// successor. `penalty_draw` is a uniform draw used for compressor
    /// accuracy penalties.
    pub fn on_compute_complete(
        &mut self,
        model: &ModelSpec,
        oracle: &dyn ConfidenceOracle,
        penalty_draw: f64,
    ) -> Result<Outcome, WorkerError> {
        let task = self.current.take().ok_or(WorkerError::NotBusy(self.id))?;
        let k = task.stage;
        let logits = oracle.logits_for(task.datum_id, k)?;
        let conf = confidence::evaluate(&logits);

        if k >= model.num_stages() || conf.value > self.threshold(k) {
            let truth = oracle.truth(task.datum_id)?;
            let keep = model.penalties_before(k).fold(1.0, |acc, p| acc * (1.0 - p));
            let mut predicted = conf.label;
            if predicted == truth && penalty_draw >= keep {
                predicted = (truth + 1) % model.num_classes();
            }
            return Ok(Outcome::Exit(ExitDecision {
                task,
                confidence: conf.value,
                predicted_label: predicted,
                correct: predicted == truth,
            }));
        }

        let next = successor_task(model, &task).expect("non-final stage has a successor");
        if self.leaving {
            self.output.push_back(next.clone());
            return Ok(Outcome::EnqueuedOutput(next));
        }
        if self.input.is_empty() || self.output.len() > self.output_threshold {
            self.input.push_back(next.clone());
            Ok(Outcome::EnqueuedInput(next))
        } else {
            self.output.push_back(next.clone());
            Ok(Outcome::EnqueuedOutput(next))
        }
    }

    /// Accepts a task from a neighbor (or a new datum at the source).
    pub fn enqueue_remote(&mut self, task: Task) -> Result<(), (WorkerError, Task)> {
        if !self.accepts_tasks() {
            return Err((WorkerError::WorkerDeparted(self.id), task));
        }
        self.input.push_back(task);
        Ok(())
    }

    /// Puts a task that could not be delivered back at the head of the
    /// output queue.
    pub fn retain(&mut self, task: Task) {
        self.output.push_front(task);
    }

    pub fn pop_output(&mut self) -> Option<Task> {
        self.output.pop_front()
    }

    pub fn head_output(&self) -> Option<&Task> {
        self.output.front()
    }

    /// An idle worker with nothing to compute takes back its own head-of-line
    /// output task rather than leaving itself idle.
    pub fn reclaim_if_idle(&mut self) -> bool {
        if self.accepts_tasks() && self.current.is_none() && self.input.is_empty() {
            if let Some(task) = self.output.pop_front() {
                self.input.push_back(task);
                return true;
            }
        }
        false
    }

    /// Begins a graceful departure: stops accepting and moves every queued
    /// input task to the output queue for draining.
    pub fn begin_leave(&mut self) {
        self.leaving = true;
        while let Some(t) = self.input.pop_front() {
            self.output.push_back(t);
        }
    }

    /// Departed once draining finished and nothing is running.
    pub fn ready_to_depart(&self) -> bool {
        self.leaving && self.current.is_none() && self.output.is_empty() && self.input.is_empty()
    }

    pub fn depart(&mut self) {
        self.alive = false;
    }

    pub fn join(&mut self) {
        self.alive = true;
        self.leaving = false;
        self.input.clear();
        self.output.clear();
        self.current = None;
    }
}
