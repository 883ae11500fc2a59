//! The five navigation variants and the models behind them.

use std::fmt;
use std::path::Path;

use bayesnav_core::control::{self, train_ensemble, PolicyEnsemble, PredictiveSet};
use bayesnav_core::env::{self, ControlSample, Observation, PerceptionSample, CONTROL_TRAIN_FRACTION, PERCEPTION_TRAIN_FRACTION};
use bayesnav_core::perception::{train_cmvae, CmvaeLite, LatentSampleSet, TrainReport};
use bayesnav_core::seed;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VariantId {
    M0,
    M1,
    M2,
    M3,
    M4,
}

impl VariantId {
    pub const ALL: [VariantId; 5] = [VariantId::M0, VariantId::M1, VariantId::M2, VariantId::M3, VariantId::M4];
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    McDropout,
    DeterministicEncode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    EnsembleProb { members: usize },
    Deterministic,
    SingleProb,
}

/// One row of the model matrix: how latents are sampled (`lvs` of them)
/// and which policy consumes them, giving `cps` predictive components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub id: VariantId,
    pub perception_mode: PerceptionMode,
    pub lvs: usize,
    pub control: ControlKind,
    pub cps: usize,
}

impl ModelVariant {
    pub fn new(id: VariantId, perception_mode: PerceptionMode, lvs: usize, control: ControlKind, cps: usize) -> Result<Self> {
        let expected = match control {
            ControlKind::EnsembleProb { members } => lvs * members,
            ControlKind::Deterministic | ControlKind::SingleProb => lvs,
        };
        if lvs == 0 || cps != expected {
            return Err(HarnessError::Config(format!("{id}: cps {cps} inconsistent with lvs {lvs} and {control:?}")));
        }
        Ok(Self {
            id,
            perception_mode,
            lvs,
            control,
            cps,
        })
    }

    /// The model matrix for `n` ensemble members and `m` latent samples
    /// (defaults 5 and 32).
    pub fn matrix(n: usize, m: usize) -> Result<[ModelVariant; 5]> {
        use ControlKind::*;
        use PerceptionMode::*;
        Ok([
            Self::new(VariantId::M0, McDropout, m, EnsembleProb { members: n }, m * n)?,
            Self::new(VariantId::M1, DeterministicEncode, m, EnsembleProb { members: n }, m * n)?,
            Self::new(VariantId::M2, DeterministicEncode, 1, EnsembleProb { members: n }, n)?,
            Self::new(VariantId::M3, DeterministicEncode, m, Deterministic, m)?,
            Self::new(VariantId::M4, DeterministicEncode, 1, SingleProb, 1)?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub training_hash: String,
    pub perception: CmvaeLite,
    pub ensemble: PolicyEnsemble,
    pub deterministic: PolicyEnsemble,
    pub single: PolicyEnsemble,
    pub perception_report: TrainReport,
}

impl TrainedModels {
    pub fn policy(&self, kind: ControlKind) -> &PolicyEnsemble {
        match kind {
            ControlKind::EnsembleProb { .. } => &self.ensemble,
            ControlKind::Deterministic => &self.deterministic,
            ControlKind::SingleProb => &self.single,
        }
    }

    /// Latent samples and predictive set for one observation.
    pub fn infer<R: RngCore + ?Sized>(
        &self,
        variant: &ModelVariant,
        observation: &Observation,
        rng: &mut R,
    ) -> Result<(LatentSampleSet, PredictiveSet)> {
        let input = observation.network_input();
        let dropout = variant.perception_mode == PerceptionMode::McDropout;
        let latents = self.perception.sample_latents(&input, variant.lvs, dropout, true, rng)?;
        let pred = self.policy(variant.control).predict(&latents)?;
        debug_assert_eq!(pred.len(), variant.cps);
        Ok((latents, pred))
    }
}

/// Deterministic datasets for one training seed.
pub struct Datasets {
    pub perception: Vec<PerceptionSample>,
    pub control: Vec<ControlSample>,
}

pub fn generate_datasets(config: &ExperimentConfig) -> Result<Datasets> {
    let s = config.training_seed;
    Ok(Datasets {
        perception: env::generate_perception_dataset(seed::derive(s, &[0x7065]), config.perception_samples, &config.world)?,
        control: env::generate_control_dataset(
            seed::derive(s, &[0x6374]),
            config.control_samples,
            &config.world,
            &config.rollout,
        )?,
    })
}

/// Held-out part of the control dataset.
pub fn control_holdout(data: &Datasets) -> Vec<ControlSample> {
    env::split(&data.control, CONTROL_TRAIN_FRACTION).1
}

pub fn train_models(config: &ExperimentConfig, data: &Datasets) -> Result<TrainedModels> {
    let s = config.training_seed;
    let (p_train, p_eval) = env::split(&data.perception, PERCEPTION_TRAIN_FRACTION);
    let (perception, perception_report) = train_cmvae(&p_train, &p_eval, &config.perception, seed::derive(s, &[0x6d76]))?;
    let (c_train, _) = env::split(&data.control, CONTROL_TRAIN_FRACTION);
    let c = &config.control;
    let (ensemble, _) = train_ensemble(&c_train, &perception, config.ensemble_size, false, c, seed::derive(s, &[0x656e]))?;
    let (deterministic, _) = train_ensemble(&c_train, &perception, 1, true, c, seed::derive(s, &[0x6474]))?;
    let (single, _) = train_ensemble(&c_train, &perception, 1, false, c, seed::derive(s, &[0x7367]))?;
    Ok(TrainedModels {
        training_hash: config.training_hash(),
        perception,
        ensemble,
        deterministic,
        single,
        perception_report,
    })
}

fn cache_file(dir: &Path, hash: &str) -> std::path::PathBuf {
    dir.join(hash).join("models.json")
}

/// Trains, or loads the models cached under the training hash.
pub fn load_or_train(config: &ExperimentConfig, data: Option<&Datasets>) -> Result<TrainedModels> {
    let hash = config.training_hash();
    if let Some(dir) = &config.cache_dir {
        let path = cache_file(dir, &hash);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            let models: TrainedModels =
                serde_json::from_str(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
            if models.training_hash == hash {
                return Ok(models);
            }
        }
    }
    let owned;
    let data = match data {
        Some(d) => d,
        None => {
            owned = generate_datasets(config)?;
            &owned
        }
    };
    let models = train_models(config, data)?;
    if let Some(dir) = &config.cache_dir {
        let path = cache_file(dir, &hash);
        crate::io::write_json(&path, &models)?;
    }
    Ok(models)
}

/// Convenience for callers that only need the pipeline's command.
pub fn aggregate(pred: &PredictiveSet, config: &ExperimentConfig) -> Result<env::VelocityCommand> {
    Ok(control::aggregate_command(pred, &config.world.limits)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_matches_component_counts() {
        let m = ModelVariant::matrix(5, 32).unwrap();
        let cps: Vec<usize> = m.iter().map(|v| v.cps).collect();
        assert_eq!(cps, vec![160, 160, 5, 32, 1]);
        assert!(ModelVariant::new(VariantId::M0, PerceptionMode::McDropout, 32, ControlKind::EnsembleProb { members: 5 }, 32).is_err());
    }
}
