//! Calibration, condition batches, the ablation matrix and aggregation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, MonitorConfig};
use crate::error::{Error, Result};
use crate::monitor::{calibrate_thresholds, drift_scores, Event};
use crate::recovery::{mttr_a, MttrStats, RecoveryConfig, RecoveryEvent};
use crate::sim::{
    episode_rng, run_episode, Calibration, EpisodeSpec, EpisodeTrace, Scenario, SimConfig,
    StepRecord, Variant,
};
use crate::stability::{calibrate_scale_with, innovation_energy};

/// RNG domains keep calibration, evaluation and hold-out episodes on
/// disjoint streams.
pub const CALIBRATION_DOMAIN: u64 = 1;
pub const EVALUATION_DOMAIN: u64 = 2;
pub const HOLDOUT_DOMAIN: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub variant: Variant,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub sim: SimConfig,
    pub monitor: MonitorConfig,
    pub recovery: RecoveryConfig,
    pub episodes: usize,
    pub calibration_runs: usize,
    pub master_seed: u64,
    pub conditions: Vec<Condition>,
}

impl ExperimentPlan {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        Ok(ExperimentPlan {
            sim: cfg.sim,
            monitor: cfg.monitor,
            recovery: cfg.recovery,
            episodes: cfg.experiment.episodes,
            calibration_runs: cfg.experiment.calibration_runs,
            master_seed: cfg.experiment.master_seed,
            conditions: cfg
                .experiment
                .conditions
                .iter()
                .map(|c| Condition {
                    name: c.name.clone(),
                    variant: c.resolve_variant(&cfg.recovery),
                    scenario: c.scenario,
                })
                .collect(),
        })
    }

    pub fn condition(&self, name: &str) -> Result<&Condition> {
        self.conditions
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::validation("condition", format!("unknown condition `{name}`")))
    }

    fn spec<'a>(&'a self, c: &Condition, calibration: Option<&'a Calibration>) -> EpisodeSpec<'a> {
        EpisodeSpec {
            sim: &self.sim,
            recovery: &self.recovery,
            scenario: c.scenario,
            variant: c.variant,
            window: self.monitor.window,
            calibration,
            keep_vectors: false,
        }
    }
}

/// Fits scale and thresholds on nominal, uncontrolled episodes of `variant`.
pub fn run_calibration(plan: &ExperimentPlan, variant: Variant) -> Result<Calibration> {
    if plan.calibration_runs < 10 {
        return Err(Error::Calibration(format!(
            "need at least 10 calibration runs, got {}",
            plan.calibration_runs
        )));
    }
    let cond = Condition {
        name: "calibration".into(),
        variant,
        scenario: Scenario::Nominal,
    };
    let spec = plan.spec(&cond, None);
    let nus: Vec<Vec<f64>> = (0..plan.calibration_runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(plan.master_seed, CALIBRATION_DOMAIN, i);
            run_episode(&spec, i, &mut rng).map(|tr| tr.steps.iter().map(|s| s.nu).collect())
        })
        .collect::<Result<_>>()?;

    let pooled: Vec<f64> = nus.iter().flatten().copied().collect();
    let scale = calibrate_scale_with(&pooled, plan.monitor.epsilon, plan.monitor.scale_form)?;
    if scale.is_degenerate() {
        log::warn!(
            "nominal innovations of {} have zero spread; scale falls back to epsilon",
            variant.calibration_key()
        );
    }
    let scores = nus
        .iter()
        .map(|ep| {
            let energies = ep
                .iter()
                .map(|&nu| innovation_energy(nu, &scale))
                .collect::<Result<Vec<_>>>()?;
            Ok(drift_scores(&energies, plan.monitor.window)?
                .into_iter()
                .flatten()
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let thresholds = calibrate_thresholds(
        &scores,
        plan.monitor.tau_percentile,
        plan.monitor.tau_d_percentile,
        plan.monitor.kappa,
    )?;
    if thresholds.tau_d == 0.0 {
        log::warn!("calibrated drift threshold is zero; every nonzero score will trigger");
    }
    Ok(Calibration {
        dim: plan.sim.dim,
        nominal_gain: variant.nominal_gain(&plan.sim, &plan.recovery),
        window: plan.monitor.window,
        scale,
        thresholds,
    })
}

/// One calibration per distinct calibration key among the plan's conditions.
pub fn calibrate_all(plan: &ExperimentPlan) -> Result<BTreeMap<String, Calibration>> {
    let mut out = BTreeMap::new();
    for c in &plan.conditions {
        let key = c.variant.calibration_key();
        if !out.contains_key(key) {
            out.insert(key.to_string(), run_calibration(plan, c.variant)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// Mean and population std; `None` for an empty population.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Aggregate {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Per-step aggregates across episodes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Curves {
    pub nu: Vec<Aggregate>,
    pub energy: Vec<Aggregate>,
    pub drift_score: Vec<Option<Aggregate>>,
    pub semantic_drift: Vec<Aggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub episode: u64,
    pub drift_score: Option<f64>,
    pub semantic_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub name: String,
    pub scenario: Scenario,
    pub variant: Variant,
    pub episodes: usize,
    pub detected: usize,
    pub recovered: usize,
    pub detection_rate: f64,
    pub recovery_rate: Option<f64>,
    pub mttr: Option<MttrStats>,
    pub latency_mean: Option<f64>,
    pub pre_onset_detections: usize,
    pub curves: Curves,
    pub scatter: Vec<ScatterPoint>,
}

/// Minimal per-episode input for aggregation; also rebuildable from trace
/// files.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: u64,
    pub steps: Vec<StepRecord>,
}

impl EpisodeRecord {
    /// Detection/recovery cycles recovered from the per-step event column.
    pub fn events(&self) -> Result<Vec<RecoveryEvent>> {
        let mut out: Vec<RecoveryEvent> = Vec::new();
        for s in &self.steps {
            match s.event {
                Some(Event::DriftDetected) => {
                    if out.last().is_some_and(|e| e.t_r.is_none()) {
                        return Err(Error::contract(format!(
                            "episode {}: detection at step {} while already detected",
                            self.index, s.t
                        )));
                    }
                    out.push(RecoveryEvent { t_0: s.t, t_r: None });
                }
                Some(Event::RecoveryComplete) => match out.last_mut() {
                    Some(e) if e.t_r.is_none() => e.t_r = Some(s.t),
                    _ => {
                        return Err(Error::contract(format!(
                            "episode {}: recovery at step {} without detection",
                            self.index, s.t
                        )))
                    }
                },
                None => {}
            }
        }
        Ok(out)
    }
}

impl From<&EpisodeTrace> for EpisodeRecord {
    fn from(tr: &EpisodeTrace) -> Self {
        EpisodeRecord {
            index: tr.index,
            steps: tr.steps.clone(),
        }
    }
}

pub fn summarize(
    name: &str,
    scenario: Scenario,
    variant: Variant,
    onset: usize,
    episodes: &[EpisodeRecord],
) -> Result<ConditionSummary> {
    let n = episodes.len();
    let mut detected = 0usize;
    let mut recovered = 0usize;
    let mut pre_onset = 0usize;
    let mut latencies = Vec::new();
    let mut all_events = Vec::new();
    for ep in episodes {
        let events = ep.events()?;
        if let Some(first) = events.first() {
            detected += 1;
            let lat = crate::monitor::detection_latency(first.t_0, onset);
            if lat < 0 {
                pre_onset += 1;
            }
            latencies.push(lat as f64);
            if events.iter().any(|e| e.t_r.is_some()) {
                recovered += 1;
            }
        }
        all_events.extend(events);
    }

    let horizon = episodes.iter().map(|e| e.steps.len()).max().unwrap_or(0);
    let mut curves = Curves::default();
    for i in 0..horizon {
        let column = |f: &dyn Fn(&StepRecord) -> Option<f64>| -> Vec<f64> {
            episodes.iter().filter_map(|e| e.steps.get(i).and_then(f)).collect()
        };
        let agg = |v: Vec<f64>| Aggregate::of(&v).unwrap_or(Aggregate { mean: f64::NAN, std: f64::NAN });
        curves.nu.push(agg(column(&|s| Some(s.nu))));
        curves.energy.push(agg(column(&|s| Some(s.energy))));
        curves.drift_score.push(Aggregate::of(&column(&|s| s.drift_score)));
        curves.semantic_drift.push(agg(column(&|s| Some(s.semantic_drift))));
    }
    let scatter = episodes
        .iter()
        .filter_map(|e| {
            e.steps.last().map(|s| ScatterPoint {
                episode: e.index,
                drift_score: s.drift_score,
                semantic_drift: s.semantic_drift,
            })
        })
        .collect();

    Ok(ConditionSummary {
        name: name.to_string(),
        scenario,
        variant,
        episodes: n,
        detected,
        recovered,
        detection_rate: if n == 0 { 0.0 } else { detected as f64 / n as f64 },
        recovery_rate: (detected > 0).then(|| recovered as f64 / detected as f64),
        mttr: mttr_a(&all_events),
        latency_mean: Aggregate::of(&latencies).map(|a| a.mean),
        pre_onset_detections: pre_onset,
        curves,
        scatter,
    })
}

#[derive(Debug, Clone)]
pub struct ConditionRun {
    pub summary: ConditionSummary,
    pub traces: Vec<EpisodeTrace>,
}

/// Runs `count` episodes of `condition` on the given RNG domain.
pub fn run_episodes(
    plan: &ExperimentPlan,
    condition: &Condition,
    calibration: &Calibration,
    domain: u64,
    count: usize,
) -> Result<Vec<EpisodeTrace>> {
    let expected = condition.variant.nominal_gain(&plan.sim, &plan.recovery);
    if calibration.nominal_gain != expected {
        return Err(Error::contract(format!(
            "calibration fitted at gain {} used for a variant with gain {expected}",
            calibration.nominal_gain
        )));
    }
    let spec = plan.spec(condition, Some(calibration));
    (0..count as u64)
        .into_par_iter()
        .map(|i| run_episode(&spec, i, &mut episode_rng(plan.master_seed, domain, i)))
        .collect()
}

pub fn run_condition(
    plan: &ExperimentPlan,
    condition: &Condition,
    calibration: &Calibration,
) -> Result<ConditionRun> {
    let traces = run_episodes(plan, condition, calibration, EVALUATION_DOMAIN, plan.episodes)?;
    let records: Vec<EpisodeRecord> = traces.iter().map(EpisodeRecord::from).collect();
    let summary = summarize(
        &condition.name,
        condition.scenario,
        condition.variant,
        plan.sim.onset,
        &records,
    )?;
    Ok(ConditionRun { summary, traces })
}

/// Runs every condition of the plan on paired seeds.
pub fn run_ablation(
    plan: &ExperimentPlan,
    calibrations: &BTreeMap<String, Calibration>,
) -> Result<Vec<ConditionRun>> {
    plan.conditions
        .iter()
        .map(|c| {
            let key = c.variant.calibration_key();
            let cal = calibrations
                .get(key)
                .ok_or_else(|| Error::Calibration(format!("missing calibration for {key}")))?;
            run_condition(plan, c, cal)
        })
        .collect()
}

/// Runs `f` on a dedicated pool of `jobs` threads (`0` picks the rayon
/// default). Results do not depend on `jobs`.
pub fn with_jobs<T, F>(jobs: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::contract(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
