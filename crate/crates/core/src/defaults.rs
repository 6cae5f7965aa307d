//! Built-in tuning values, parsed once from the embedded defaults file.

use std::sync::OnceLock;

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::attack::SpoofErrorModel;
use crate::experiment::CampaignSettings;
use crate::msf::{KfConfig, OutlierPolicy};
use crate::profiler::ProfilingConfig;
use crate::trace::{DemoTraceSpec, NoiseModel, Scenario};
use crate::vehicle::ControllerConfig;

const DEFAULTS_TOML: &str = include_str!("../config/defaults.toml");

/// Serialized form of [`KfConfig`] with diagonal matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KfSettings {
    pub process_noise: [f64; 5],
    pub initial_covariance: [f64; 5],
    pub chi2_threshold: f64,
    pub outlier_policy: OutlierPolicy,
}

impl KfSettings {
    pub fn to_config(&self) -> KfConfig {
        KfConfig {
            process_noise: Matrix5::from_diagonal(&Vector5::from(self.process_noise)),
            observation_model: KfConfig::position_observation(),
            chi2_threshold: self.chi2_threshold,
            outlier_policy: self.outlier_policy,
            initial_covariance: Matrix5::from_diagonal(&Vector5::from(self.initial_covariance)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackDefaults {
    pub trigger_threshold: f64,
    pub max_duration: f64,
    pub random_range_max: f64,
    pub search_step: f64,
    pub search_max: f64,
    pub search_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub kf: KfSettings,
    pub noise: NoiseModel,
    pub scenario: Scenario,
    pub attack: AttackDefaults,
    pub spoof_error: SpoofErrorModel,
    pub controller: ControllerConfig,
    pub profiling: ProfilingConfig,
    pub demo: DemoTraceSpec,
    pub campaign: CampaignSettings,
}

pub fn defaults() -> &'static Defaults {
    static CELL: OnceLock<Defaults> = OnceLock::new();
    CELL.get_or_init(|| toml::from_str(DEFAULTS_TOML).expect("embedded defaults parse"))
}

/// The embedded defaults file, verbatim.
pub fn defaults_toml() -> &'static str {
    DEFAULTS_TOML
}
