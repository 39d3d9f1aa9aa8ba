//! Run configuration: one TOML file holding the scenario and every model
//! setting, validated up front and echoed into the output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ndt_core::baseline::BaselineConfig;
use ndt_core::divergence::DivergenceKind;
use ndt_core::io::config_hash;
use ndt_core::netsim::{Scenario, Trajectory};
use ndt_core::oda::TrainerConfig;
use ndt_core::session::DEFAULT_MSE_WINDOW;
use ndt_core::triggers::TriggerConfig;
use ndt_core::twin::TwinConfig;
use ndt_core::types::{FeatureBounds, OutOfBoundsPolicy};

use crate::error::{CliError, CliResult};

/// Quality ranges and block weights of the normalized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// `[rsrp, sinr]` lower ends.
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub w_x: f64,
    pub w_q: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            q_min: vec![-110.0, -10.0],
            q_max: vec![-50.0, 30.0],
            w_x: 1.0,
            w_q: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub out_of_bounds: OutOfBoundsPolicy,
    /// Observations in the running MSE / classification-error windows.
    pub mse_window: usize,
    /// Keep every n-th training-log row.
    pub log_every: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            out_of_bounds: OutOfBoundsPolicy::Clamp,
            mse_window: DEFAULT_MSE_WINDOW,
            log_every: 1,
        }
    }
}

/// Optional warm-up on a fault-free survey of the same world before the
/// main stream; the main run then starts from the converged model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub duration: f64,
    /// Survey path; the scenario trajectory when absent.
    #[serde(default)]
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub twin: TwinConfig,
    #[serde(default)]
    pub triggers: TriggerConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Overrides every seed (simulator, perturbation, MLP init) with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self.trainer.rng_seed = seed;
        self.baseline.seed = seed;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        self.scenario.validate()?;
        self.bounds().validate()?;
        self.trainer.validate()?;
        self.twin.validate()?;
        self.triggers.validate(self.features.q_min.len())?;
        self.baseline.validate()?;
        if self.features.q_min.len() != 2 {
            return Err(CliError::Validation(
                "features.q_min: the simulator reports [rsrp, sinr]".into(),
            ));
        }
        if self.run.mse_window == 0 {
            return Err(CliError::Validation(
                "run.mse_window: must be at least 1".into(),
            ));
        }
        if self.run.log_every == 0 {
            return Err(CliError::Validation(
                "run.log_every: must be at least 1".into(),
            ));
        }
        if let Some(p) = &self.pretrain {
            if !(p.duration > 0.0 && p.duration.is_finite()) {
                return Err(CliError::Validation(
                    "pretrain.duration: must be positive".into(),
                ));
            }
            if let Some(t) = &p.trajectory {
                t.validate()?;
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> FeatureBounds {
        FeatureBounds {
            w_x: self.features.w_x,
            w_q: self.features.w_q,
            ..FeatureBounds::from_workspace(
                &self.scenario.workspace,
                self.features.q_min.clone(),
                self.features.q_max.clone(),
            )
        }
    }

    pub fn divergence(&self) -> DivergenceKind {
        DivergenceKind::euclidean(self.bounds().component_weights())
    }

    /// The fault-free survey scenario used for pretraining, if configured.
    pub fn pretrain_scenario(&self) -> Option<Scenario> {
        self.pretrain.as_ref().map(|p| Scenario {
            trajectory: p
                .trajectory
                .clone()
                .unwrap_or_else(|| self.scenario.trajectory.clone()),
            duration: p.duration,
            events: Vec::new(),
            ..self.scenario.clone()
        })
    }

    /// Canonical TOML text of the effective configuration.
    pub fn canonical(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))
    }

    pub fn hash(&self) -> CliResult<String> {
        Ok(config_hash(&self.canonical()?))
    }
}
