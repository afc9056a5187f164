//! Runtime stability monitoring for iterative inference loops.
//!
//! The crate measures innovation between predicted and realized evidence,
//! turns it into a windowed drift score, detects drift against calibrated
//! thresholds, and drives a recovery controller. A synthetic episode
//! simulator and an experiment harness exercise the whole loop.

pub mod config;
pub mod error;
pub mod harness;
pub mod monitor;
pub mod recovery;
pub mod report;
pub mod sim;
pub mod stability;
pub mod vector;

pub use config::{Config, ConditionSpec, ExperimentConfig, MonitorConfig};
pub use error::{Error, Result};
pub use harness::{
    run_ablation, run_calibration, run_condition, Aggregate, ConditionSummary, Curves,
    ExperimentPlan, ScatterPoint,
};
pub use monitor::{
    calibrate_thresholds, detection_latency, drift_scores, nearest_rank, Event, Monitor,
    SlidingWindow, Thresholds,
};
pub use recovery::{
    mttr_a, rollback, ControllerState, EventLog, Mechanism, Mechanisms, Mode, MttrStats,
    RecoveryConfig, RecoveryEvent,
};
pub use sim::{
    emit_evidence, episode_rng, generate_intents, predict, run_episode, update_state,
    Calibration, EpisodeSpec, EpisodeTrace, IntentPair, Scenario, SimConfig, StepRecord,
    StepVectors, Variant,
};
pub use stability::{
    calibrate_scale, calibrate_scale_with, check_runtime_stability, cosine_distance_innovation,
    innovation_energy, semantic_drift, InnovationSample, ScaleCalibration, ScaleForm,
    StabilityBounds, StabilityVerdict,
};
pub use vector::UnitVector;
