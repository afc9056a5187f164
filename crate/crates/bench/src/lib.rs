//! Fixtures shared by the benchmarks.

use runstab_core::{Config, ExperimentPlan};

/// Default configuration with the state dimension and episode count
/// overridden.
pub fn plan(dim: usize, episodes: usize, calibration_runs: usize) -> ExperimentPlan {
    let mut cfg = Config::default();
    cfg.sim.dim = dim;
    cfg.experiment.episodes = episodes;
    cfg.experiment.calibration_runs = calibration_runs;
    ExperimentPlan::from_config(&cfg).expect("benchmark config is valid")
}
