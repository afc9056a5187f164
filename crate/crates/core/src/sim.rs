//! Synthetic agent episodes: unit-vector latent state, evidence under
//! nominal / misroute / delayed scenarios, and the closed control loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{Event, Monitor, Thresholds};
use crate::recovery::{ControllerState, EventLog, Mechanisms, RecoveryConfig};
use crate::stability::{cosine_distance_innovation, innovation_energy, semantic_drift, ScaleCalibration};
use crate::vector::{gaussian, UnitVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dim: usize,
    pub horizon: usize,
    /// First perturbed step.
    pub onset: usize,
    pub sigma_q: f64,
    pub sigma_r: f64,
    /// Update gain of the baseline (non-controlled) agent.
    pub baseline_gain: f64,
    /// Staleness of delayed evidence, in steps.
    pub delay_k: usize,
    /// Intent rotation per step in the delayed scenario, radians.
    pub theta: f64,
    /// Number of steps the intent keeps rotating; unbounded when absent.
    pub rotation_span: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dim: 768,
            horizon: 30,
            onset: 5,
            sigma_q: 0.0088,
            sigma_r: 0.155,
            baseline_gain: 0.9,
            delay_k: 2,
            theta: 0.5,
            rotation_span: Some(3),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::validation("sim.dim", "must be at least 2"));
        }
        if self.horizon < 2 {
            return Err(Error::validation("sim.horizon", "must be at least 2"));
        }
        if !(1 <= self.onset && self.onset < self.horizon) {
            return Err(Error::validation("sim.onset", "must satisfy 1 <= onset < horizon"));
        }
        if !(self.sigma_q >= 0.0 && self.sigma_q.is_finite()) {
            return Err(Error::validation("sim.sigma_q", "must be finite and >= 0"));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::validation("sim.sigma_r", "must be finite and >= 0"));
        }
        if !(self.baseline_gain > 0.0 && self.baseline_gain <= 1.0) {
            return Err(Error::validation("sim.baseline_gain", "must lie in (0, 1]"));
        }
        if self.delay_k < 1 {
            return Err(Error::validation("sim.delay_k", "must be at least 1"));
        }
        if !self.theta.is_finite() {
            return Err(Error::validation("sim.theta", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Nominal,
    Misroute,
    Delayed,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Nominal => "nominal",
            Scenario::Misroute => "misroute",
            Scenario::Delayed => "delayed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "mechanisms")]
pub enum Variant {
    /// High-gain agent; drift is monitored but never acted on.
    Baseline,
    /// Nominal-gain agent with the given recovery mechanisms.
    RecoveryAware(Mechanisms),
}

impl Variant {
    pub fn nominal_gain(&self, sim: &SimConfig, rec: &RecoveryConfig) -> f64 {
        match self {
            Variant::Baseline => sim.baseline_gain,
            Variant::RecoveryAware(_) => rec.alpha,
        }
    }

    /// Variants sharing a key share a calibration.
    pub fn calibration_key(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::RecoveryAware(_) => "recovery_aware",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentPair {
    pub u: UnitVector,
    pub u_wrong: UnitVector,
}

impl IntentPair {
    /// Intent rotated by `angle` from `u` toward `u_wrong`.
    pub fn rotated(&self, angle: f64) -> Result<UnitVector> {
        let (s, c) = angle.sin_cos();
        let comps = self
            .u
            .as_slice()
            .iter()
            .zip(self.u_wrong.as_slice())
            .map(|(a, b)| c * a + s * b)
            .collect();
        UnitVector::normalize(comps)
    }
}

/// Uniform `u`, and a uniform draw orthogonalized against it.
pub fn generate_intents<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<IntentPair> {
    let u = UnitVector::random(rng, dim)?;
    loop {
        let mut w = UnitVector::random(rng, dim)?.into_inner();
        let proj: f64 = w.iter().zip(u.as_slice()).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(u.as_slice()).for_each(|(a, b)| *a -= proj * b);
        if let Ok(u_wrong) = UnitVector::normalize(w) {
            if u_wrong.dot(&u)?.abs() <= 1e-12 {
                return Ok(IntentPair { u, u_wrong });
            }
        }
    }
}

/// Identity transition: the prediction is the previous state.
pub fn predict(x_prev: &UnitVector) -> UnitVector {
    x_prev.clone()
}

/// Rotation angle of the true intent at step `s` (delayed scenario). The
/// intent is static before onset, then turns by `theta` per step for at most
/// `rotation_span` steps.
fn intent_angle(cfg: &SimConfig, s: i64) -> f64 {
    let turned = (s - cfg.onset as i64 + 1).max(0) as usize;
    let turned = cfg.rotation_span.map_or(turned, |span| turned.min(span));
    cfg.theta * turned as f64
}

/// Evidence center for step `t`.
pub fn evidence_center(
    cfg: &SimConfig,
    scenario: Scenario,
    t: usize,
    intents: &IntentPair,
    fallback_active: bool,
) -> Result<UnitVector> {
    let perturbed = t >= cfg.onset && !fallback_active;
    match scenario {
        Scenario::Nominal => Ok(intents.u.clone()),
        Scenario::Misroute if perturbed => Ok(intents.u_wrong.clone()),
        Scenario::Misroute => Ok(intents.u.clone()),
        Scenario::Delayed => {
            let s = if perturbed {
                t as i64 - cfg.delay_k as i64
            } else {
                t as i64
            };
            intents.rotated(intent_angle(cfg, s))
        }
    }
}

/// `normalize(center + sigma_r * eta)`. Always consumes `dim` normal draws.
pub fn emit_evidence<R: Rng + ?Sized>(
    cfg: &SimConfig,
    scenario: Scenario,
    t: usize,
    intents: &IntentPair,
    fallback_active: bool,
    rng: &mut R,
) -> Result<UnitVector> {
    let center = evidence_center(cfg, scenario, t, intents, fallback_active)?;
    let eta = gaussian(rng, cfg.dim);
    if cfg.sigma_r == 0.0 {
        return Ok(center);
    }
    let comps = center
        .as_slice()
        .iter()
        .zip(&eta)
        .map(|(c, n)| c + cfg.sigma_r * n)
        .collect();
    UnitVector::normalize(comps)
}

/// `normalize((1 - gain) x + gain y + sigma_q w)`. Always consumes `dim`
/// normal draws.
pub fn update_state<R: Rng + ?Sized>(
    x: &UnitVector,
    y: &UnitVector,
    gain: f64,
    sigma_q: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    if !(0.0..=1.0).contains(&gain) {
        return Err(Error::contract(format!("gain must lie in [0, 1], got {gain}")));
    }
    let w = gaussian(rng, x.dim());
    if sigma_q == 0.0 {
        if gain == 0.0 {
            return Ok(x.clone());
        }
        if gain == 1.0 || x == y {
            return Ok(y.clone());
        }
    }
    let comps = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .zip(&w)
        .map(|((a, b), n)| (1.0 - gain) * a + gain * b + sigma_q * n)
        .collect();
    UnitVector::normalize(comps)
}

/// Scale and thresholds fitted for one variant's nominal gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub dim: usize,
    pub nominal_gain: f64,
    pub window: usize,
    pub scale: ScaleCalibration,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub nu: f64,
    pub energy: f64,
    pub drift_score: Option<f64>,
    pub semantic_drift: f64,
    pub event: Option<Event>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepVectors {
    pub state: UnitVector,
    pub prediction: UnitVector,
    pub evidence: UnitVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub index: u64,
    pub scenario: Scenario,
    pub variant: Variant,
    pub onset: usize,
    pub steps: Vec<StepRecord>,
    pub log: EventLog,
    pub intents: IntentPair,
    /// Per-step vectors, kept only on request.
    pub vectors: Option<Vec<StepVectors>>,
}

impl EpisodeTrace {
    /// First detection step.
    pub fn t_0(&self) -> Option<usize> {
        self.log.events().first().map(|e| e.t_0)
    }

    /// First recovery step.
    pub fn t_r(&self) -> Option<usize> {
        self.log.events().iter().find_map(|e| e.t_r)
    }

    pub fn detected(&self) -> bool {
        self.t_0().is_some()
    }

    pub fn recovered(&self) -> bool {
        self.t_r().is_some()
    }

    pub fn final_step(&self) -> Option<&StepRecord> {
        self.steps.last()
    }
}

/// Everything an episode needs besides its RNG.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSpec<'a> {
    pub sim: &'a SimConfig,
    pub recovery: &'a RecoveryConfig,
    pub scenario: Scenario,
    pub variant: Variant,
    pub window: usize,
    /// Monitoring and control are disabled when absent.
    pub calibration: Option<&'a Calibration>,
    pub keep_vectors: bool,
}

/// Deterministic per-episode stream: seeded by `(master, domain)` and
/// selecting ChaCha stream `index`.
pub fn episode_rng(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

pub fn run_episode<R: Rng + ?Sized>(spec: &EpisodeSpec<'_>, index: u64, rng: &mut R) -> Result<EpisodeTrace> {
    let sim = spec.sim;
    if let Some(cal) = spec.calibration {
        if cal.dim != sim.dim {
            return Err(Error::DimensionMismatch {
                left: cal.dim,
                right: sim.dim,
            });
        }
    }
    let mut rec_cfg = *spec.recovery;
    if let Variant::RecoveryAware(m) = spec.variant {
        rec_cfg.mechanisms = m;
    }
    let nominal_gain = spec.variant.nominal_gain(sim, spec.recovery);
    rec_cfg.alpha = nominal_gain;

    let intents = generate_intents(rng, sim.dim)?;
    let mut x = intents.u.clone();
    let mut monitor = Monitor::new(spec.window)?;
    let mut ctrl = ControllerState::new(&rec_cfg);
    let mut log = EventLog::new();
    let mut steps = Vec::with_capacity(sim.horizon);
    let mut vectors = spec.keep_vectors.then(|| Vec::with_capacity(sim.horizon));
    let unit_scale = ScaleCalibration::fixed(1.0)?;
    let scale = spec.calibration.map_or(&unit_scale, |c| &c.scale);

    for t in 1..=sim.horizon {
        let pred = predict(&x);
        let y = emit_evidence(sim, spec.scenario, t, &intents, ctrl.fallback_active, rng)?;
        let nu = cosine_distance_innovation(&pred, &y)?;
        let energy = innovation_energy(nu, scale)?;
        let score = monitor.push(energy)?;
        let mut event = None;

        if let Some(cal) = spec.calibration {
            let th = &cal.thresholds;
            match spec.variant {
                Variant::Baseline => {
                    if let Some(d) = score {
                        event = monitor.evaluate_passive(d, th, t)?;
                        if event == Some(Event::DriftDetected) {
                            log.open(t)?;
                        }
                    }
                }
                Variant::RecoveryAware(_) => {
                    ctrl.record_snapshot(&pred, score, th.tau);
                    if let Some(d) = score {
                        event = monitor.evaluate(d, th, t)?;
                        match event {
                            Some(Event::DriftDetected) => {
                                x = ctrl.engage(&x, &rec_cfg)?;
                                log.open(t)?;
                            }
                            Some(Event::RecoveryComplete) => {
                                ctrl.complete(&rec_cfg)?;
                                log.close(t)?;
                            }
                            None => {}
                        }
                    }
                }
            }
        }

        x = update_state(&x, &y, ctrl.active_gain, sim.sigma_q, rng)?;
        let s = semantic_drift(&x, &intents.u)?;
        steps.push(StepRecord {
            t,
            nu,
            energy,
            drift_score: score,
            semantic_drift: s,
            event,
        });
        if let Some(v) = vectors.as_mut() {
            v.push(StepVectors {
                state: x.clone(),
                prediction: pred,
                evidence: y,
            });
        }
    }

    Ok(EpisodeTrace {
        index,
        scenario: spec.scenario,
        variant: spec.variant,
        onset: sim.onset,
        steps,
        log,
        intents,
        vectors,
    })
}
