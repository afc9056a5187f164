//! Recovery policy (rollback, gain modulation, tool fallback), event log
//! bookkeeping and MTTR-A.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::UnitVector;

pub const DEFAULT_ALPHA: f64 = 0.35;
pub const DEFAULT_BETA: f64 = 0.20;
pub const DEFAULT_GAMMA_G: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Rollback,
    GainModulation,
    ToolFallback,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [
        Mechanism::Rollback,
        Mechanism::GainModulation,
        Mechanism::ToolFallback,
    ];
}

/// Enabled subset of recovery mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Mechanism>", into = "Vec<Mechanism>")]
pub struct Mechanisms {
    pub rollback: bool,
    pub gain_modulation: bool,
    pub tool_fallback: bool,
}

impl Mechanisms {
    pub const ALL: Mechanisms = Mechanisms {
        rollback: true,
        gain_modulation: true,
        tool_fallback: true,
    };
    pub const NONE: Mechanisms = Mechanisms {
        rollback: false,
        gain_modulation: false,
        tool_fallback: false,
    };

    pub fn contains(&self, m: Mechanism) -> bool {
        match m {
            Mechanism::Rollback => self.rollback,
            Mechanism::GainModulation => self.gain_modulation,
            Mechanism::ToolFallback => self.tool_fallback,
        }
    }

    pub fn without(mut self, m: Mechanism) -> Self {
        match m {
            Mechanism::Rollback => self.rollback = false,
            Mechanism::GainModulation => self.gain_modulation = false,
            Mechanism::ToolFallback => self.tool_fallback = false,
        }
        self
    }
}

impl From<Vec<Mechanism>> for Mechanisms {
    fn from(v: Vec<Mechanism>) -> Self {
        v.into_iter().fold(Mechanisms::NONE, |mut acc, m| {
            match m {
                Mechanism::Rollback => acc.rollback = true,
                Mechanism::GainModulation => acc.gain_modulation = true,
                Mechanism::ToolFallback => acc.tool_fallback = true,
            }
            acc
        })
    }
}

impl From<Mechanisms> for Vec<Mechanism> {
    fn from(m: Mechanisms) -> Self {
        Mechanism::ALL.into_iter().filter(|x| m.contains(*x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    /// Nominal update gain.
    pub alpha: f64,
    /// Rollback mixing weight.
    pub beta: f64,
    /// Gain multiplier while recovering.
    pub gamma_g: f64,
    pub mechanisms: Mechanisms,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma_g: DEFAULT_GAMMA_G,
            mechanisms: Mechanisms::ALL,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::validation("recovery.alpha", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::validation("recovery.beta", "must lie in [0, 1]"));
        }
        if !(self.gamma_g > 0.0 && self.gamma_g <= 1.0) {
            return Err(Error::validation("recovery.gamma_g", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Off,
    On,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub mode: Mode,
    pub active_gain: f64,
    pub stable_snapshot: Option<UnitVector>,
    pub fallback_active: bool,
}

impl ControllerState {
    pub fn new(cfg: &RecoveryConfig) -> Self {
        ControllerState {
            mode: Mode::Off,
            active_gain: cfg.alpha,
            stable_snapshot: None,
            fallback_active: false,
        }
    }

    /// Stores `x` as the rollback target when idle and the score is at or
    /// below `tau` (or not yet available).
    pub fn record_snapshot(&mut self, x: &UnitVector, score: Option<f64>, tau: f64) {
        if self.mode == Mode::Off && score.is_none_or(|d| d <= tau) {
            self.stable_snapshot = Some(x.clone());
        }
    }

    /// Applies the enabled mechanisms in order rollback, gain, fallback and
    /// returns the corrected state.
    pub fn engage(&mut self, x: &UnitVector, cfg: &RecoveryConfig) -> Result<UnitVector> {
        if self.mode == Mode::On {
            return Err(Error::contract("recovery is already engaged"));
        }
        let mut x = x.clone();
        if cfg.mechanisms.rollback {
            if let Some(snap) = &self.stable_snapshot {
                x = rollback(&x, snap, cfg.beta)?;
            }
        }
        if cfg.mechanisms.gain_modulation {
            self.active_gain = cfg.gamma_g * cfg.alpha;
        }
        if cfg.mechanisms.tool_fallback {
            self.fallback_active = true;
        }
        self.mode = Mode::On;
        Ok(x)
    }

    pub fn complete(&mut self, cfg: &RecoveryConfig) -> Result<()> {
        if self.mode == Mode::Off {
            return Err(Error::contract("no recovery in progress"));
        }
        self.mode = Mode::Off;
        self.active_gain = cfg.alpha;
        self.fallback_active = false;
        Ok(())
    }
}

/// `normalize((1 - beta) x + beta snapshot)`; returns the snapshot itself at
/// `beta = 1` and `x` at `beta = 0`.
pub fn rollback(x: &UnitVector, snapshot: &UnitVector, beta: f64) -> Result<UnitVector> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::contract(format!("beta must lie in [0, 1], got {beta}")));
    }
    if beta == 0.0 {
        return Ok(x.clone());
    }
    if beta == 1.0 {
        return Ok(snapshot.clone());
    }
    x.blend(1.0 - beta, snapshot, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryEvent {
    pub t_0: usize,
    pub t_r: Option<usize>,
}

impl RecoveryEvent {
    pub fn duration(&self) -> Option<usize> {
        self.t_r.map(|t_r| t_r - self.t_0)
    }
}

/// Append-only per-episode log of detection/recovery cycles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    events: Vec<RecoveryEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, t_0: usize) -> Result<()> {
        if self.open_event().is_some() {
            return Err(Error::contract("a recovery event is already open"));
        }
        self.events.push(RecoveryEvent { t_0, t_r: None });
        Ok(())
    }

    pub fn close(&mut self, t_r: usize) -> Result<()> {
        let ev = self
            .events
            .last_mut()
            .filter(|e| e.t_r.is_none())
            .ok_or_else(|| Error::contract("no open recovery event"))?;
        if t_r < ev.t_0 {
            return Err(Error::contract(format!(
                "recovery step {t_r} precedes detection step {}",
                ev.t_0
            )));
        }
        ev.t_r = Some(t_r);
        Ok(())
    }

    pub fn open_event(&self) -> Option<&RecoveryEvent> {
        self.events.last().filter(|e| e.t_r.is_none())
    }

    pub fn events(&self) -> &[RecoveryEvent] {
        &self.events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MttrStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and population std of `t_r - t_0` over recovered events.
pub fn mttr_a<'a, I>(events: I) -> Option<MttrStats>
where
    I: IntoIterator<Item = &'a RecoveryEvent>,
{
    let durations: Vec<f64> = events
        .into_iter()
        .filter_map(|e| e.duration())
        .map(|d| d as f64)
        .collect();
    if durations.is_empty() {
        return None;
    }
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Some(MttrStats {
        mean,
        std: var.sqrt(),
        count: durations.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RecoveryConfig {
        RecoveryConfig {
            alpha: 0.35,
            beta: 0.2,
            gamma_g: 0.5,
            mechanisms: Mechanisms::ALL,
        }
    }

    fn ev(t_0: usize, t_r: Option<usize>) -> RecoveryEvent {
        RecoveryEvent { t_0, t_r }
    }

    #[test]
    fn snapshot_gate() {
        let v = UnitVector::basis(2, 0).unwrap();
        let w = UnitVector::basis(2, 1).unwrap();
        let mut s = ControllerState::new(&cfg());
        s.record_snapshot(&v, Some(0.3), 0.5);
        assert_eq!(s.stable_snapshot.as_ref(), Some(&v));
        s.record_snapshot(&w, Some(0.6), 0.5);
        assert_eq!(s.stable_snapshot.as_ref(), Some(&v));
        s.record_snapshot(&w, None, 0.5);
        assert_eq!(s.stable_snapshot.as_ref(), Some(&w));
        s.engage(&v, &cfg()).unwrap();
        s.record_snapshot(&v, Some(0.0), 0.5);
        assert_eq!(s.stable_snapshot.as_ref(), Some(&w));
    }

    #[test]
    fn rollback_extremes() {
        let x = UnitVector::normalize(vec![0.2, 0.9, -0.1]).unwrap();
        let snap = UnitVector::normalize(vec![1.0, 0.0, 0.5]).unwrap();
        assert_eq!(rollback(&x, &snap, 0.0).unwrap(), x);
        assert_eq!(rollback(&x, &snap, 1.0).unwrap(), snap);
        assert!(rollback(&x, &snap, 1.5).is_err());
    }

    #[test]
    fn rollback_orthogonal_pair() {
        let x = UnitVector::basis(2, 0).unwrap();
        let snap = UnitVector::basis(2, 1).unwrap();
        let r = rollback(&x, &snap, 0.2).unwrap();
        let norm = (0.8f64 * 0.8 + 0.2 * 0.2).sqrt();
        assert!((r.as_slice()[0] - 0.8 / norm).abs() < 1e-15);
        assert!((r.as_slice()[1] - 0.2 / norm).abs() < 1e-15);
    }

    #[test]
    fn engage_and_complete() {
        let c = cfg();
        let x = UnitVector::basis(2, 0).unwrap();
        let mut s = ControllerState::new(&c);
        s.record_snapshot(&UnitVector::basis(2, 1).unwrap(), None, 1.0);
        let y = s.engage(&x, &c).unwrap();
        assert_ne!(y, x);
        assert_eq!(s.mode, Mode::On);
        assert_eq!(s.active_gain, 0.175);
        assert!(s.fallback_active);
        assert!(s.engage(&y, &c).is_err());
        s.complete(&c).unwrap();
        assert_eq!(s.active_gain, 0.35);
        assert!(!s.fallback_active);
        assert!(s.complete(&c).is_err());
    }

    #[test]
    fn disabled_mechanisms_only_flip_mode() {
        let mut c = cfg();
        c.mechanisms = Mechanisms::NONE;
        let x = UnitVector::basis(3, 0).unwrap();
        let mut s = ControllerState::new(&c);
        s.record_snapshot(&UnitVector::basis(3, 2).unwrap(), None, 1.0);
        let y = s.engage(&x, &c).unwrap();
        assert_eq!(y, x);
        assert_eq!(s.active_gain, c.alpha);
        assert!(!s.fallback_active);
        assert_eq!(s.mode, Mode::On);
    }

    #[test]
    fn missing_snapshot_skips_rollback() {
        let c = cfg();
        let x = UnitVector::basis(3, 0).unwrap();
        let mut s = ControllerState::new(&c);
        assert_eq!(s.engage(&x, &c).unwrap(), x);
    }

    #[test]
    fn event_log_bookkeeping() {
        let mut log = EventLog::new();
        log.open(8).unwrap();
        assert!(log.open(9).is_err());
        log.close(12).unwrap();
        assert!(log.close(13).is_err());
        log.open(15).unwrap();
        assert!(log.close(14).is_err());
        log.close(20).unwrap();
        assert_eq!(log.events(), &[ev(8, Some(12)), ev(15, Some(20))]);
    }

    #[test]
    fn mttr_examples() {
        let s = mttr_a(&[ev(5, Some(9)), ev(10, Some(14))]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (4.0, 0.0, 2));
        let s = mttr_a(&[ev(5, Some(9)), ev(10, Some(18))]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (6.0, 2.0, 2));
        assert!(mttr_a(&[ev(5, None)]).is_none());
        assert!(mttr_a(&[]).is_none());
    }

    #[test]
    fn mechanisms_serde_roundtrip() {
        let m = Mechanisms::ALL.without(Mechanism::GainModulation);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"["rollback","tool_fallback"]"#);
        assert_eq!(serde_json::from_str::<Mechanisms>(&json).unwrap(), m);
    }

    fn unit(dim: usize) -> impl Strategy<Value = UnitVector> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("nonzero", |v| v.iter().any(|c| c.abs() > 1e-3))
            .prop_map(|v| UnitVector::normalize(v).unwrap())
    }

    proptest! {
        #[test]
        fn rollback_stays_unit(
            (x, s) in (2usize..16).prop_flat_map(|d| (unit(d), unit(d))),
            beta in 0.0f64..1.0,
        ) {
            // Antipodal mixes at beta = 0.5 have no direction.
            if let Ok(r) = rollback(&x, &s, beta) {
                prop_assert!((r.norm() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn mttr_matches_brute_force(
            spans in prop::collection::vec((0usize..30, prop::option::of(0usize..30)), 0..40),
        ) {
            let events: Vec<RecoveryEvent> =
                spans.iter().map(|&(t0, d)| ev(t0, d.map(|d| t0 + d))).collect();
            let closed: Vec<f64> = events
                .iter()
                .filter(|e| e.t_r.is_some())
                .map(|e| (e.t_r.unwrap() - e.t_0) as f64)
                .collect();
            match mttr_a(&events) {
                None => prop_assert!(closed.is_empty()),
                Some(s) => {
                    let mut total = 0.0;
                    for d in &closed { total += d; }
                    let mean = total / closed.len() as f64;
                    let mut ss = 0.0;
                    for d in &closed { ss += (d - mean) * (d - mean); }
                    prop_assert_eq!(s.count, closed.len());
                    prop_assert_eq!(s.mean, mean);
                    prop_assert_eq!(s.std, (ss / closed.len() as f64).sqrt());
                }
            }
        }

        #[test]
        fn gain_modulated_exactly_once(alpha in 0.01f64..1.0, g in 0.01f64..1.0) {
            let c = RecoveryConfig { alpha, beta: 0.2, gamma_g: g, mechanisms: Mechanisms::ALL };
            let mut s = ControllerState::new(&c);
            let x = UnitVector::basis(2, 0).unwrap();
            s.engage(&x, &c).unwrap();
            prop_assert_eq!(s.active_gain, g * alpha);
            prop_assert!(s.engage(&x, &c).is_err());
            prop_assert_eq!(s.active_gain, g * alpha);
        }
    }
}
