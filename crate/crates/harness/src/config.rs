use std::path::{Path, PathBuf};

use bayesnav_core::control::ControlConfig;
use bayesnav_core::dependability::{MonitorConfig, RiskConfig, DEFAULT_SEARCH_YAW_RATE};
use bayesnav_core::env::{NoiseLevel, RolloutConfig, WorldConfig};
use bayesnav_core::perception::PerceptionConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedNoise {
    pub name: String,
    #[serde(flatten)]
    pub noise: NoiseLevel,
}

/// Start-pose perturbation distinguishing the trials on one track.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialJitter {
    /// Std of the horizontal position offset (m).
    pub position_std: f64,
    /// Std of the heading offset (rad).
    pub yaw_std: f64,
}

impl Default for TrialJitter {
    fn default() -> Self {
        Self {
            position_std: 0.25,
            yaw_std: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardedRunConfig {
    /// `None` disables arbitration (infinite threshold).
    pub risk_threshold: Option<f64>,
    pub search_yaw_rate: f64,
    pub steps: usize,
    /// Start position, facing radially outward.
    pub start: [f64; 3],
    /// Explicit monitor bands; calibrated from the scene subsets when absent.
    pub monitors: Option<MonitorConfig>,
}

impl Default for GuardedRunConfig {
    fn default() -> Self {
        Self {
            risk_threshold: Some(0.5),
            search_yaw_rate: DEFAULT_SEARCH_YAW_RATE,
            steps: 400,
            start: [14.0, 0.0, 2.0],
            monitors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds the training data and every network initialization.
    pub training_seed: u64,
    /// Track seeds; each is combined with every noise level.
    pub seeds: Vec<u64>,
    pub noise_levels: Vec<NamedNoise>,
    pub trials_per_track: usize,
    pub episode_steps: usize,
    pub jitter: TrialJitter,
    pub perception_samples: usize,
    pub control_samples: usize,
    pub scene_samples_per_class: usize,
    pub ensemble_size: usize,
    pub latent_samples: usize,
    pub ece_levels: usize,
    pub world: WorldConfig,
    pub rollout: RolloutConfig,
    pub perception: PerceptionConfig,
    pub control: ControlConfig,
    pub risk: RiskConfig,
    pub guarded: GuardedRunConfig,
    /// Not part of the configuration hash.
    pub output_dir: PathBuf,
    /// Trained models are stored here under their training hash; `None`
    /// disables caching. Not part of the configuration hash.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            training_seed: 1,
            seeds: (0..6).collect(),
            noise_levels: vec![
                NamedNoise {
                    name: "low".into(),
                    noise: NoiseLevel::LOW,
                },
                NamedNoise {
                    name: "high".into(),
                    noise: NoiseLevel::HIGH,
                },
            ],
            trials_per_track: 3,
            episode_steps: 2000,
            jitter: TrialJitter::default(),
            perception_samples: 20_000,
            control_samples: 10_000,
            scene_samples_per_class: 200,
            ensemble_size: 5,
            latent_samples: 32,
            ece_levels: 10,
            world: WorldConfig::default(),
            rollout: RolloutConfig::default(),
            perception: PerceptionConfig::default(),
            control: ControlConfig::default(),
            risk: RiskConfig::default(),
            guarded: GuardedRunConfig::default(),
            output_dir: PathBuf::from("out"),
            cache_dir: Some(PathBuf::from("cache")),
        }
    }
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.seeds.is_empty() {
            return bad("at least one track seed is required");
        }
        if self.noise_levels.is_empty() {
            return bad("at least one noise level is required");
        }
        if self.trials_per_track == 0 || self.episode_steps == 0 {
            return bad("trials_per_track and episode_steps must be positive");
        }
        if self.ensemble_size == 0 || self.latent_samples == 0 {
            return bad("ensemble_size and latent_samples must be positive");
        }
        if self.ece_levels < 2 {
            return bad("ece_levels must be at least 2");
        }
        for n in &self.noise_levels {
            n.noise.grn.validate().and(n.noise.ghn.validate()).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Hash of everything that influences results (paths excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        sha256_json(&c)
    }

    /// Hash of the inputs that determine the trained models.
    pub fn training_hash(&self) -> String {
        #[derive(Serialize)]
        struct Training<'a> {
            seed: u64,
            perception_samples: usize,
            control_samples: usize,
            ensemble_size: usize,
            world: &'a WorldConfig,
            rollout: &'a RolloutConfig,
            perception: &'a PerceptionConfig,
            control: &'a ControlConfig,
        }
        sha256_json(&Training {
            seed: self.training_seed,
            perception_samples: self.perception_samples,
            control_samples: self.control_samples,
            ensemble_size: self.ensemble_size,
            world: &self.world,
            rollout: &self.rollout,
            perception: &self.perception,
            control: &self.control,
        })
    }
}
