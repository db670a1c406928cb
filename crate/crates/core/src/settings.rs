//! Config-file loading and resolution. Resolution order is built-in defaults,
//! then the config file, then CLI flags; unknown keys are rejected so a
//! typo'd hyperparameter never passes silently.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{FlightCondition, FlightConditionConfig};
use crate::error::{Error, Result};
use crate::harness::CampaignConfig;
use crate::plant::PlantParams;
use crate::ppo::PpoHyperparams;

macro_rules! apply {
    ($dst:expr, $src:expr, [$($field:ident),* $(,)?]) => {
        $(if let Some(v) = $src.$field.clone() {
            $dst.$field = v;
        })*
    };
}

/// `[condition.<name>]` section: overrides for one flight-condition row.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionOverride {
    pub baseline_lift: Option<f64>,
    pub flow_speed: Option<f64>,
    pub alpha_deg: Option<f64>,
    pub training_min_deflection: Option<f64>,
    pub training_max_deflection: Option<f64>,
    pub gust_duration: Option<f64>,
    pub testing_deflections: Option<Vec<f64>>,
    pub lift_anchors: Option<Vec<(f64, f64)>>,
    pub action_deltas: Option<Vec<f64>>,
}

/// `[plant]` section: actuator and sensing calibration overrides.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantOverride {
    pub play_width: Option<f64>,
    pub lag_tau: Option<f64>,
    pub creep_rate: Option<f64>,
    pub camber_lift_gain: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub lift_noise_sigma: Option<f64>,
    pub pressure_scale: Option<f64>,
    pub camber_coupling: Option<[f64; 6]>,
    pub up_sensitivity: Option<[f64; 6]>,
    pub down_sensitivity: Option<[f64; 6]>,
}

/// `[ppo]` section.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoOverride {
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub clip_epsilon: Option<f64>,
    pub epochs_per_update: Option<usize>,
    pub minibatch_size: Option<usize>,
    pub entropy_coef: Option<f64>,
    pub value_coef: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub learning_rate: Option<f64>,
    pub conv_filters: Option<usize>,
}

/// `[training]` section.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverride {
    pub episodes: Option<usize>,
}

/// `[campaign]` section.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignOverride {
    pub episodes: Option<usize>,
    pub bootstrap_resamples: Option<usize>,
}

/// Whole config file. Every section is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub condition: BTreeMap<String, ConditionOverride>,
    pub plant: Option<PlantOverride>,
    pub ppo: Option<PpoOverride>,
    pub training: Option<TrainingOverride>,
    pub campaign: Option<CampaignOverride>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(toml::from_str(&text)?)
    }

    /// Built-in condition row with this file's overrides applied.
    pub fn resolve_condition(&self, condition: FlightCondition) -> Result<FlightConditionConfig> {
        let mut cfg = FlightConditionConfig::builtin(condition);
        for (name, ov) in &self.condition {
            let key: FlightCondition = name.parse()?;
            if key != condition {
                continue;
            }
            apply!(
                cfg,
                ov,
                [
                    baseline_lift,
                    flow_speed,
                    alpha_deg,
                    training_min_deflection,
                    training_max_deflection,
                    gust_duration,
                    testing_deflections,
                    lift_anchors,
                    action_deltas,
                ]
            );
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Plant calibration defaults for a condition with overrides applied.
    pub fn resolve_plant(&self, cfg: &FlightConditionConfig) -> Result<PlantParams> {
        let mut params = PlantParams::defaults_for(cfg);
        if let Some(ov) = &self.plant {
            apply!(
                params.actuator,
                ov,
                [play_width, lag_tau, creep_rate, camber_lift_gain]
            );
            apply!(params.profile, ov, [noise_sigma, up_sensitivity, down_sensitivity]);
            apply!(
                params,
                ov,
                [lift_noise_sigma, pressure_scale, camber_coupling]
            );
        }
        params.validate()?;
        Ok(params)
    }

    pub fn resolve_ppo(&self) -> Result<PpoHyperparams> {
        let mut hp = PpoHyperparams::default();
        if let Some(ov) = &self.ppo {
            apply!(
                hp,
                ov,
                [
                    gamma,
                    lambda,
                    clip_epsilon,
                    epochs_per_update,
                    minibatch_size,
                    entropy_coef,
                    value_coef,
                    max_grad_norm,
                    learning_rate,
                    conv_filters,
                ]
            );
        }
        hp.validate()?;
        Ok(hp)
    }

    /// Training episode count: file override or the given default.
    pub fn resolve_episodes(&self, default: usize) -> usize {
        self.training
            .as_ref()
            .and_then(|t| t.episodes)
            .unwrap_or(default)
    }

    pub fn resolve_campaign(&self, preset: &str) -> Result<CampaignConfig> {
        let mut campaign = CampaignConfig::preset(preset)?;
        if let Some(ov) = &self.campaign {
            apply!(campaign, ov, [episodes, bootstrap_resamples]);
        }
        Ok(campaign)
    }
}
