//! Run configuration: one TOML document with a section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critical::CriticalConfig;
use crate::envs::{EnvConfig, EnvKind};
use crate::error::ConfigError;
use crate::extend::ExtensionConfig;
use crate::hybrid::DEFAULT_ZENO_LIMIT;
use crate::rl::TrainConfig;

/// Settings for retraining one policy per extended region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainConfig {
    pub total_steps: usize,
    pub success_bar: f64,
    /// Learning rate for the fine-tuning runs; `None` keeps the baseline's.
    pub learning_rate: Option<f64>,
    /// Initial exploration rate of Q-learning fine-tuning.
    pub epsilon_start: f64,
    /// Start from the baseline weights instead of a fresh network.
    pub warm_start: bool,
    /// Also train on the cells that commit to neither side (such as those
    /// past the obstacle), where the two region policies need not differ.
    pub include_uncommitted: bool,
    /// Uniform measurement-noise bound applied to training observations.
    pub observation_noise: f64,
}

impl RetrainConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        Self {
            total_steps: match kind {
                EnvKind::UnitCircle => 150_000,
                EnvKind::Obstacle => 50_000,
            },
            success_bar: 0.9,
            learning_rate: None,
            epsilon_start: 0.1,
            // a trained Gaussian policy has too little spread left to explore
            warm_start: kind == EnvKind::Obstacle,
            include_uncommitted: true,
            observation_noise: 0.0,
        }
    }
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self::for_env(EnvKind::UnitCircle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridConfig {
    pub zeno_limit: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            zeno_limit: DEFAULT_ZENO_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Independent samples uniform on `[-ε, ε]`.
    Uniform,
    /// Sign chosen against the baseline policy at every step, recorded and
    /// replayed to the hybrid system.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    /// Measurement-noise magnitude ε.
    pub noise: f64,
    pub noise_mode: NoiseMode,
    /// Simulated duration in seconds; `None` selects the per-environment default.
    pub duration: Option<f64>,
    pub stuck_window: f64,
    pub stuck_threshold: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            noise: 0.1,
            noise_mode: NoiseMode::Adversarial,
            duration: None,
            stuck_window: 2.0,
            stuck_threshold: 0.05,
        }
    }
}

impl HarnessConfig {
    pub fn duration_for(&self, kind: EnvKind) -> f64 {
        self.duration.unwrap_or(match kind {
            EnvKind::UnitCircle => 4.0,
            EnvKind::Obstacle => 3.5,
        })
    }
}

/// Everything needed to reproduce a run. The master `seed` overrides
/// `train.seed`; the retraining and noise streams derive from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub env_config: EnvConfig,
    pub train: TrainConfig,
    pub retrain: RetrainConfig,
    pub critical: CriticalConfig,
    pub extend: ExtensionConfig,
    #[serde(default)]
    pub hybrid: HybridConfig,
    #[serde(default)]
    pub harness: HarnessConfig,
}

impl RunConfig {
    /// Per-environment defaults.
    pub fn for_env(kind: EnvKind) -> Self {
        Self {
            env: kind,
            seed: 0,
            out_dir: PathBuf::from(format!("runs/{}", kind.name())),
            env_config: EnvConfig::default(),
            train: TrainConfig::for_env(kind),
            retrain: RetrainConfig::for_env(kind),
            critical: CriticalConfig::for_env(kind),
            extend: ExtensionConfig::default(),
            hybrid: HybridConfig::default(),
            harness: HarnessConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ConfigError::MissingArtifact(path.to_path_buf()),
            _ => ConfigError::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config is plain data")
    }

    /// Baseline training settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Fine-tuning settings for the policy of mode `q`.
    pub fn retrain_config(&self, q: u8) -> TrainConfig {
        let base = self.train_config();
        TrainConfig {
            seed: self.seed.wrapping_mul(1_000).wrapping_add(1 + q as u64),
            total_steps: self.retrain.total_steps,
            success_bar: self.retrain.success_bar,
            learning_rate: self.retrain.learning_rate.unwrap_or(base.learning_rate),
            mirror_augmentation: false,
            observation_noise: self.retrain.observation_noise,
            dqn: crate::rl::DqnConfig {
                epsilon_start: self.retrain.epsilon_start,
                ..base.dqn.clone()
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.train.validate().map_err(|e| invalid(&e))?;
        self.retrain_config(0).validate().map_err(|e| invalid(&e))?;
        self.extend.validate().map_err(|e| invalid(&e))?;
        let env = crate::envs::Env::new(self.env, &self.env_config).map_err(|e| invalid(&e))?;
        self.critical.validate(&env).map_err(|e| invalid(&e))?;
        let h = &self.harness;
        if !(h.noise >= 0.0) || !(h.stuck_window > 0.0) || !(h.stuck_threshold > 0.0) {
            return Err(ConfigError::Invalid(
                "noise must be non-negative and stuck thresholds positive".into(),
            ));
        }
        if matches!(h.duration, Some(d) if !(d > 0.0)) {
            return Err(ConfigError::Invalid("duration must be positive".into()));
        }
        if self.hybrid.zeno_limit == 0 {
            return Err(ConfigError::Invalid("zeno limit must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for kind in [EnvKind::UnitCircle, EnvKind::Obstacle] {
            let cfg = RunConfig::for_env(kind);
            cfg.validate().unwrap();
            assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::for_env(EnvKind::Obstacle).to_toml();
        text.push_str("\n[harness.extra]\nvalue = 1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Parse(_))));
        let text = RunConfig::for_env(EnvKind::Obstacle)
            .to_toml()
            .replace("seed = 0", "seed = 0\nbogus = true");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn master_seed_drives_training_seeds() {
        let mut cfg = RunConfig::for_env(EnvKind::UnitCircle);
        cfg.seed = 7;
        cfg.train.seed = 123;
        assert_eq!(cfg.train_config().seed, 7);
        assert_ne!(cfg.retrain_config(0).seed, cfg.retrain_config(1).seed);
        assert!(!cfg.retrain_config(1).mirror_augmentation);
        assert_eq!(cfg.retrain_config(0).total_steps, cfg.retrain.total_steps);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::for_env(EnvKind::UnitCircle);
        cfg.harness.noise = -0.1;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = RunConfig::for_env(EnvKind::UnitCircle);
        cfg.critical.probe_radius = 0.0;
        assert!(cfg.validate().is_err());
    }
}
