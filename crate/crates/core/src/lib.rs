//! Simulator and library for model-distributed DNN inference with early exit.
//!
//! Workers each hold contiguous slices of a network, partitioned at its exit
//! points. A task is one slice for one datum. After running a task a worker
//! computes the softmax confidence of the exit classifier and either exits
//! (returning the label to the source) or creates the next task, which it
//! keeps or offloads to a neighbor depending on queue lengths and delays. The
//! source keeps queues bounded by adapting either its admission rate or the
//! exit threshold.
//!
//! ```text
//!  source ──arrivals──▶ input queue ──▶ compute ──▶ exit? ──yes──▶ result ──▶ source
//!                          ▲                          │no
//!                          │                          ▼
//!                 neighbor offload ◀── output queue ◀─ next task
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod admission;
pub mod confidence;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod offload;
pub mod output;
pub mod presets;
pub mod rng;
pub mod sweep;
pub mod worker;

pub use engine::{run, run_with_options, EngineError, RunOptions, RunOutput, ScenarioConfig};
pub use metrics::MetricsReport;
pub use model::{build_partition, ModelSpec};
