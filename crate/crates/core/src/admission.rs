//! Queue-driven controllers: interarrival-time adaptation at the source and
//! early-exit threshold adaptation. Both compare the backlog I_n + O_n with
//! two thresholds and move a scalar multiplicatively, like a delay-based
//! congestion window.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    #[default]
    None,
    RateAdaptation,
    ThresholdAdaptation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdScope {
    /// Every worker adapts its own threshold from its own queues.
    #[default]
    PerWorker,
    /// The source adapts; workers pick up its value at gossip ticks.
    SourceGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub t_q1: usize,
    pub t_q2: usize,
    /// Seconds between controller wakes.
    pub sleep: f64,
    pub te_min: f64,
    /// Floor on the interarrival time.
    pub mu_min: f64,
    pub threshold_scope: ThresholdScope,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            mode: ControllerMode::None,
            alpha: 0.2,
            beta: 0.1,
            zeta: 0.2,
            t_q1: 10,
            t_q2: 30,
            sleep: 1.0,
            te_min: 0.5,
            mu_min: 1e-4,
            threshold_scope: ThresholdScope::PerWorker,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, x: f64| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(format!("controller.{name} must lie in (0, 1), got {x}"))
            }
        };
        unit("alpha", self.alpha)?;
        unit("beta", self.beta)?;
        unit("zeta", self.zeta)?;
        if self.alpha <= self.beta {
            return Err("controller.alpha must exceed controller.beta".into());
        }
        if self.t_q1 > self.t_q2 {
            return Err("controller.t_q1 must not exceed controller.t_q2".into());
        }
        if !(self.sleep > 0.0) {
            return Err("controller.sleep must be positive".into());
        }
        if !(self.te_min > 0.0 && self.te_min <= 1.0) {
            return Err("controller.te_min must lie in (0, 1]".into());
        }
        if !(self.mu_min > 0.0) {
            return Err("controller.mu_min must be positive".into());
        }
        Ok(())
    }
}

/// Which comparison fired on a controller wake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// q < T_Q1
    Low,
    /// T_Q1 < q < T_Q2
    Mid,
    /// q > T_Q2
    High,
    /// q equal to a threshold: no change.
    Hold,
}

impl Band {
    pub fn classify(q: usize, cfg: &ControllerConfig) -> Band {
        if q < cfg.t_q1 {
            Band::Low
        } else if q > cfg.t_q1 && q < cfg.t_q2 {
            Band::Mid
        } else if q > cfg.t_q2 {
            Band::High
        } else {
            Band::Hold
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Mid => "mid",
            Band::High => "high",
            Band::Hold => "hold",
        }
    }
}

/// New interarrival time for backlog `q`.
pub fn adapt_interarrival(q: usize, mu: f64, cfg: &ControllerConfig) -> (f64, Band) {
    let band = Band::classify(q, cfg);
    let next = match band {
        Band::Low => mu - cfg.alpha * mu,
        Band::Mid => mu - cfg.beta * mu,
        Band::High => mu + cfg.zeta * mu,
        Band::Hold => mu,
    };
    (next.max(cfg.mu_min), band)
}

/// New early-exit threshold for backlog `q`, kept in `[te_min, 1]` when it moves.
pub fn adapt_threshold(q: usize, te: f64, cfg: &ControllerConfig) -> (f64, Band) {
    let band = Band::classify(q, cfg);
    let next = match band {
        Band::Low => (te + cfg.alpha * te).min(1.0),
        Band::Mid => (te + cfg.beta * te).min(1.0),
        Band::High => (te - cfg.zeta * te).max(cfg.te_min),
        Band::Hold => te,
    };
    (next, band)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Fixed spacing `interarrival`, adapted by the rate controller.
    Adaptive { interarrival: f64 },
    /// Exponential gaps with mean `1 / rate`.
    Poisson { rate: f64 },
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            ArrivalProcess::Adaptive { interarrival } if !(interarrival > 0.0) => {
                Err("arrivals.interarrival must be positive".into())
            }
            ArrivalProcess::Poisson { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err("arrivals.rate must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SourceState {
    pub process: ArrivalProcess,
    pub admitted: u64,
}

impl SourceState {
    pub fn new(process: ArrivalProcess) -> Self {
        SourceState { process, admitted: 0 }
    }

    /// Current interarrival time (mean gap for Poisson arrivals).
    pub fn interarrival(&self) -> f64 {
        match self.process {
            ArrivalProcess::Adaptive { interarrival } => interarrival,
            ArrivalProcess::Poisson { rate } => 1.0 / rate,
        }
    }

    pub fn set_interarrival(&mut self, mu: f64) {
        if let ArrivalProcess::Adaptive { interarrival } = &mut self.process {
            *interarrival = mu;
        }
    }

    /// Time of the next arrival after `now`.
    pub fn next_arrival<R: Rng>(&self, now: f64, rng: &mut R) -> f64 {
        match self.process {
            ArrivalProcess::Adaptive { interarrival } => now + interarrival,
            ArrivalProcess::Poisson { rate } => now + Exp::new(rate).expect("validated rate").sample(rng),
        }
    }
}
