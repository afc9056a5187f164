//! Sliding-window drift scoring, threshold calibration and the
//! detect/recover hysteresis state machine.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_TAU_PERCENTILE: f64 = 0.90;
pub const DEFAULT_TAU_D_PERCENTILE: f64 = 0.95;
pub const DEFAULT_KAPPA: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    capacity: usize,
    buffer: VecDeque<f64>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::validation("window", "must be at least 1"));
        }
        Ok(SlidingWindow {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() == self.capacity
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    /// Pushes an energy and returns the window mean once `capacity` values
    /// are held.
    pub fn push_and_score(&mut self, energy: f64) -> Result<Option<f64>> {
        if energy.is_nan() || energy < 0.0 {
            return Err(Error::contract(format!("energy must be >= 0, got {energy}")));
        }
        if self.is_full() {
            self.buffer.pop_front();
        }
        self.buffer.push_back(energy);
        // Summing the buffer each time keeps scores exact to the window
        // contents; a running sum would accumulate cancellation error.
        Ok(self
            .is_full()
            .then(|| self.buffer.iter().sum::<f64>() / self.capacity as f64))
    }
}

/// Drift scores for a whole energy sequence.
pub fn drift_scores(energies: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    let mut w = SlidingWindow::new(window)?;
    energies.iter().map(|&e| w.push_and_score(e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Snapshot-eligibility threshold.
    pub tau: f64,
    /// Detection threshold.
    pub tau_d: f64,
    /// Completion factor: recovery completes at `D <= kappa * tau_d`.
    pub kappa: f64,
}

impl Thresholds {
    pub fn new(tau: f64, tau_d: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::validation("kappa", format!("must lie in (0, 1), got {kappa}")));
        }
        if !(tau >= 0.0 && tau_d >= 0.0) || !tau.is_finite() || !tau_d.is_finite() {
            return Err(Error::validation("tau", "thresholds must be finite and nonnegative"));
        }
        if tau > tau_d {
            return Err(Error::validation("tau", format!("tau {tau} exceeds tau_d {tau_d}")));
        }
        Ok(Thresholds { tau, tau_d, kappa })
    }

    pub fn completion_level(&self) -> f64 {
        self.kappa * self.tau_d
    }
}

/// Nearest-rank percentile: element `ceil(p * n)` (1-based) of the
/// ascending sort.
pub fn nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Calibration("percentile of an empty set".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("percentile must lie in (0, 1], got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Fits thresholds from per-episode drift-score sequences, using each
/// episode's maximum score as the calibration population.
pub fn calibrate_thresholds(
    episode_scores: &[Vec<f64>],
    p_tau: f64,
    p_tau_d: f64,
    kappa: f64,
) -> Result<Thresholds> {
    if !(0.0 < p_tau && p_tau <= p_tau_d && p_tau_d < 1.0) {
        return Err(Error::contract(format!(
            "need 0 < p_tau <= p_tau_d < 1, got {p_tau}, {p_tau_d}"
        )));
    }
    let maxima: Vec<f64> = episode_scores
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    if maxima.is_empty() {
        return Err(Error::Calibration("no nonempty calibration episodes".into()));
    }
    Thresholds::new(
        nearest_rank(&maxima, p_tau)?,
        nearest_rank(&maxima, p_tau_d)?,
        kappa,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    DriftDetected,
    RecoveryComplete,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::DriftDetected => "drift_detected",
            Event::RecoveryComplete => "recovery_complete",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drift_detected" => Some(Event::DriftDetected),
            "recovery_complete" => Some(Event::RecoveryComplete),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Monitor {
    window: SlidingWindow,
    recovering: bool,
    t_0: Option<usize>,
    last_score: Option<f64>,
}

impl Monitor {
    pub fn new(window: usize) -> Result<Self> {
        Ok(Monitor {
            window: SlidingWindow::new(window)?,
            recovering: false,
            t_0: None,
            last_score: None,
        })
    }

    pub fn recovering(&self) -> bool {
        self.recovering
    }

    /// Step of the currently open detection.
    pub fn t_0(&self) -> Option<usize> {
        self.t_0
    }

    pub fn last_score(&self) -> Option<f64> {
        self.last_score
    }

    pub fn push(&mut self, energy: f64) -> Result<Option<f64>> {
        let score = self.window.push_and_score(energy)?;
        self.last_score = score;
        Ok(score)
    }

    /// Applies the hysteresis rule at step `t`. At most one event fires.
    pub fn evaluate(&mut self, score: f64, thresholds: &Thresholds, t: usize) -> Result<Option<Event>> {
        if score.is_nan() || score < 0.0 {
            return Err(Error::contract(format!("drift score must be >= 0, got {score}")));
        }
        if !self.recovering && score > thresholds.tau_d {
            self.recovering = true;
            self.t_0 = Some(t);
            Ok(Some(Event::DriftDetected))
        } else if self.recovering && score <= thresholds.completion_level() {
            self.recovering = false;
            self.t_0 = None;
            Ok(Some(Event::RecoveryComplete))
        } else {
            Ok(None)
        }
    }

    /// Detection-only mode: drift is flagged once and never cleared.
    pub fn evaluate_passive(
        &mut self,
        score: f64,
        thresholds: &Thresholds,
        t: usize,
    ) -> Result<Option<Event>> {
        if self.recovering {
            if score.is_nan() || score < 0.0 {
                return Err(Error::contract(format!("drift score must be >= 0, got {score}")));
            }
            return Ok(None);
        }
        self.evaluate(score, thresholds, t)
    }
}

/// Signed latency `t_0 - t_star`; negative means the detection preceded the
/// perturbation.
pub fn detection_latency(t_0: usize, t_star: usize) -> i64 {
    t_0 as i64 - t_star as i64
}
