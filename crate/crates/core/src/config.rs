//! JSON configuration: defaults, parsing with diagnostics, validation and
//! a content digest.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::monitor::{DEFAULT_KAPPA, DEFAULT_TAU_D_PERCENTILE, DEFAULT_TAU_PERCENTILE, DEFAULT_WINDOW};
use crate::recovery::{Mechanism, Mechanisms, RecoveryConfig};
use crate::sim::{Scenario, SimConfig, Variant};
use crate::stability::{ScaleForm, DEFAULT_EPSILON};

pub const DEFAULT_EPISODES: usize = 120;
pub const DEFAULT_CALIBRATION_RUNS: usize = 400;
pub const DEFAULT_MASTER_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub window: usize,
    pub tau_percentile: f64,
    pub tau_d_percentile: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub scale_form: ScaleForm,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            window: DEFAULT_WINDOW,
            tau_percentile: DEFAULT_TAU_PERCENTILE,
            tau_d_percentile: DEFAULT_TAU_D_PERCENTILE,
            kappa: DEFAULT_KAPPA,
            epsilon: DEFAULT_EPSILON,
            scale_form: ScaleForm::Variance,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::validation("monitor.window", "must be at least 1"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::validation(
                "monitor.kappa",
                format!("must lie in (0, 1), got {}", self.kappa),
            ));
        }
        if !(self.tau_percentile > 0.0 && self.tau_percentile < 1.0) {
            return Err(Error::validation("monitor.tau_percentile", "must lie in (0, 1)"));
        }
        if !(self.tau_d_percentile >= self.tau_percentile && self.tau_d_percentile < 1.0) {
            return Err(Error::validation(
                "monitor.tau_d_percentile",
                "must lie in [tau_percentile, 1)",
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("monitor.epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Baseline,
    RecoveryAware,
}

/// One experimental condition as written in the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub name: String,
    pub variant: VariantKind,
    /// Defaults to the recovery section's mechanism set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanisms: Option<Mechanisms>,
    pub scenario: Scenario,
}

impl ConditionSpec {
    fn new(name: &str, variant: VariantKind, mechanisms: Option<Mechanisms>, scenario: Scenario) -> Self {
        ConditionSpec {
            name: name.to_string(),
            variant,
            mechanisms,
            scenario,
        }
    }

    pub fn resolve_variant(&self, recovery: &RecoveryConfig) -> Variant {
        match self.variant {
            VariantKind::Baseline => Variant::Baseline,
            VariantKind::RecoveryAware => {
                Variant::RecoveryAware(self.mechanisms.unwrap_or(recovery.mechanisms))
            }
        }
    }
}

/// The six ablation rows.
pub fn default_conditions() -> Vec<ConditionSpec> {
    use VariantKind::*;
    let all = Mechanisms::ALL;
    vec![
        ConditionSpec::new("baseline", Baseline, None, Scenario::Misroute),
        ConditionSpec::new("full", RecoveryAware, Some(all), Scenario::Misroute),
        ConditionSpec::new(
            "no_rollback",
            RecoveryAware,
            Some(all.without(Mechanism::Rollback)),
            Scenario::Misroute,
        ),
        ConditionSpec::new(
            "no_gain_modulation",
            RecoveryAware,
            Some(all.without(Mechanism::GainModulation)),
            Scenario::Misroute,
        ),
        ConditionSpec::new(
            "no_tool_fallback",
            RecoveryAware,
            Some(all.without(Mechanism::ToolFallback)),
            Scenario::Misroute,
        ),
        ConditionSpec::new("delayed", RecoveryAware, Some(all), Scenario::Delayed),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub episodes: usize,
    pub calibration_runs: usize,
    pub master_seed: u64,
    pub conditions: Vec<ConditionSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            episodes: DEFAULT_EPISODES,
            calibration_runs: DEFAULT_CALIBRATION_RUNS,
            master_seed: DEFAULT_MASTER_SEED,
            conditions: default_conditions(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::validation("experiment.episodes", "must be at least 1"));
        }
        if self.calibration_runs < 10 {
            return Err(Error::validation("experiment.calibration_runs", "must be at least 10"));
        }
        if self.conditions.is_empty() {
            return Err(Error::validation("experiment.conditions", "must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.conditions {
            let ok_name = !c.name.is_empty()
                && c.name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-');
            if !ok_name {
                return Err(Error::validation(
                    "experiment.conditions.name",
                    format!("`{}` must be nonempty and use only [A-Za-z0-9_-]", c.name),
                ));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::validation(
                    "experiment.conditions.name",
                    format!("duplicate condition `{}`", c.name),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimConfig,
    pub monitor: MonitorConfig,
    pub recovery: RecoveryConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| {
            let mut message = e.to_string();
            if let Some(at) = message.rfind(" at line ") {
                message.truncate(at);
            }
            Error::Parse {
                path: origin.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.monitor.validate()?;
        self.recovery.validate()?;
        self.experiment.validate()
    }

    pub fn condition(&self, name: &str) -> Result<&ConditionSpec> {
        self.experiment
            .conditions
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| {
                let known: Vec<&str> =
                    self.experiment.conditions.iter().map(|c| c.name.as_str()).collect();
                Error::validation(
                    "condition",
                    format!("unknown condition `{name}`; known: {}", known.join(", ")),
                )
            })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self).map_err(|e| Error::Serialization(e.to_string()))?;
        let hash = Sha256::digest(&bytes);
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }
}
