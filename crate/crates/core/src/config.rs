//! Layered TOML run configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::ToyConfig;
use crate::contextgen::{AugmentSettings, HttpClientConfig};
use crate::distillation::DistillationSchedule;
use crate::objectives::JointObjectiveConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every tunable of a run, one section per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub backbone: ToyConfig,
    pub train: TrainConfig,
    pub objective: JointObjectiveConfig,
    pub distill: DistillationSchedule,
    pub augment: AugmentSettings,
    pub http: HttpClientConfig,
}

/// Recursively overlays `over` onto `base`; tables merge, everything else replaces.
pub fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl PipelineConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self, ConfigError> {
        Self::layered(std::iter::once(("<inline>".to_string(), raw.to_string())))
    }

    /// Defaults overlaid by each file in order.
    pub fn load(paths: &[&Path]) -> Result<Self, ConfigError> {
        let mut layers = Vec::new();
        for p in paths {
            let raw = fs::read_to_string(p).map_err(|e| ConfigError::Read {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
            layers.push((p.display().to_string(), raw));
        }
        Self::layered(layers)
    }

    fn layered(layers: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut merged = toml::Value::try_from(Self::default()).expect("defaults serialize");
        for (name, raw) in layers {
            let v: toml::Value = toml::from_str(&raw).map_err(|e| ConfigError::Read {
                path: name.clone(),
                message: e.to_string(),
            })?;
            merge_toml(&mut merged, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.objective.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.distill.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainMode;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg = PipelineConfig::from_toml_str(
            "[train]\nlr_plm = 1e-5\nmode = \"dft_ca\"\n[objective]\nlambda = 0.1\n[objective.masking]\nrng_seed = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.train.lr_plm, 1e-5);
        assert_eq!(cfg.train.mode, TrainMode::DftCa);
        assert_eq!(cfg.train.lr_cls, TrainConfig::default().lr_cls);
        assert_eq!(cfg.objective.lambda, 0.1);
        assert_eq!(cfg.objective.masking.mask_prob, 0.15);
        assert_eq!(cfg.objective.masking.rng_seed, 3);
        assert_eq!(cfg.distill.temperature, 100.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn later_layers_win() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.toml");
        let b = dir.path().join("b.toml");
        fs::write(&a, "[train]\nepochs = 10\nseed = 4\n").unwrap();
        fs::write(&b, "[train]\nepochs = 20\n").unwrap();
        let cfg = PipelineConfig::load(&[&a, &b]).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.seed), (20, 4));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::from_toml_str("[distill]\ngenerations = 0\n").is_err());
        assert!(PipelineConfig::from_toml_str("[objective]\nlambda = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml_str("[train\n").is_err());
    }
}
