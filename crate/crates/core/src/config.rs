//! Run configuration: one TOML document with a section per component.
//! Missing keys take their defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::EpisodeConfig;
use crate::estimator::EstimatorConfig;
use crate::gait::GaitConfig;
use crate::policy::PolicyConfig;
use crate::sim::RobotModel;
use crate::stance::StanceConfig;
use crate::swing::SwingConfig;
use crate::trainer::ArsConfig;
use crate::wbc::WbcConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.002 }
    }
}

impl SimConfig {
    /// Integer step rate; times are computed as `step / rate` so phase
    /// boundaries land exactly.
    pub fn steps_per_second(&self) -> f64 {
        (1.0 / self.dt).round()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub robot: RobotModel,
    pub gait: GaitConfig,
    pub swing: SwingConfig,
    pub stance_accel: StanceConfig,
    pub wbc: WbcConfig,
    pub estimator: EstimatorConfig,
    pub sim: SimConfig,
    pub env: EpisodeConfig,
    pub policy: PolicyConfig,
    pub ars: ArsConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.robot.validate().map_err(ConfigError::Invalid)?;
        if !(self.gait.stance_duration > 0.0 && self.gait.swing_duration > 0.0) {
            return invalid("gait durations must be positive".into());
        }
        if !(self.sim.dt > 0.0) {
            return invalid("sim.dt must be positive".into());
        }
        let rate = self.sim.steps_per_second();
        for (name, d) in [("stance", self.gait.stance_duration), ("swing", self.gait.swing_duration)] {
            if ((d * rate).round() - d * rate).abs() > 1e-9 {
                return invalid(format!("gait.{name}_duration must be a whole number of sim steps"));
            }
        }
        if self.env.jump_sequence.is_empty() {
            return invalid("env.jump_sequence must not be empty".into());
        }
        if self.policy.substeps_per_action == 0 {
            return invalid("policy.substeps_per_action must be at least 1".into());
        }
        if self.policy.hidden_units == 0 {
            return invalid("policy.hidden_units must be at least 1".into());
        }
        self.ars.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// SHA-256 over every section that shapes an episode; training-only
    /// settings are excluded so a checkpoint stays valid across them.
    pub fn env_hash(&self) -> String {
        let sections = serde_json::json!({
            "robot": self.robot,
            "gait": self.gait,
            "swing": self.swing,
            "stance_accel": self.stance_accel,
            "wbc": self.wbc,
            "estimator": self.estimator,
            "sim": self.sim,
            "env": self.env,
            "policy": self.policy,
        });
        let digest = Sha256::digest(sections.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
