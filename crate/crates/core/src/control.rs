//! Ensembles of heteroscedastic control policies over latent inputs.
//!
//! Every member maps a latent sample to a Gaussian over the four velocity
//! outputs. Passing each of `M` latent samples through each of `N` members
//! yields `M * N` components of a uniform mixture, the sample-based
//! approximation of the posterior predictive over commands.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{CommandLimits, ControlSample, VelocityCommand};
use crate::nn::{self, Activation, AdamConfig, AdamState, DenseNet, Dropout, Loss, NnError};
use crate::perception::{CmvaeLite, Latent, LatentSampleSet, PerceptionError, LATENT_DIM};
use crate::seed;

pub const COMMAND_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("ensemble needs at least one member")]
    EmptyEnsemble,
    #[error("predictive set is empty")]
    EmptyPredictiveSet,
    #[error("member {member} diverged at epoch {epoch}")]
    Diverged { member: usize, epoch: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

pub type Result<T, E = ControlError> = std::result::Result<T, E>;

/// Latents fed to the policies during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingLatents {
    MeanOnly,
    /// One fresh reparameterized draw per sample per epoch.
    Reparam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub latents: TrainingLatents,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            latents: TrainingLatents::Reparam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticPolicy {
    /// `LATENT_DIM -> hidden -> hidden -> [mean(4), log_variance(4)]`.
    pub net: DenseNet,
    pub seed_id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEnsemble {
    pub members: Vec<ProbabilisticPolicy>,
    /// Variance heads are ignored and components report zero variance.
    pub deterministic: bool,
}

/// One mixture component over the command vector. Variances are `>= 0`;
/// deterministic policies emit exact zeros.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveComponent {
    pub mean: [f64; COMMAND_DIM],
    pub variance: [f64; COMMAND_DIM],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSet {
    /// Ordered latent-major: component `m * members + n`.
    pub components: Vec<PredictiveComponent>,
    pub latent_samples: usize,
    pub members: usize,
}

impl PredictiveSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Means of every component along output dimension `dim`.
    pub fn means(&self, dim: usize) -> Vec<f64> {
        self.components.iter().map(|c| c.mean[dim]).collect()
    }

    /// `(mean, variance)` pairs along output dimension `dim`.
    pub fn marginal(&self, dim: usize) -> Vec<(f64, f64)> {
        self.components.iter().map(|c| (c.mean[dim], c.variance[dim])).collect()
    }
}

impl ProbabilisticPolicy {
    pub fn new(hidden: usize, seed_id: u64) -> Result<Self> {
        let net = DenseNet::mlp(
            &[LATENT_DIM, hidden, hidden, 2 * COMMAND_DIM],
            Activation::Relu,
            Activation::Identity,
            Dropout::none(),
            seed_id,
        )?;
        Ok(Self { net, seed_id })
    }

    fn component(&self, z: &[f64], deterministic: bool) -> Result<PredictiveComponent> {
        let out = self.net.forward(z, nn::Mode::Deterministic)?;
        let mut c = PredictiveComponent {
            mean: [0.0; COMMAND_DIM],
            variance: [0.0; COMMAND_DIM],
        };
        for d in 0..COMMAND_DIM {
            c.mean[d] = out[d];
            if !deterministic {
                c.variance[d] = nn::clamp_log_variance(out[COMMAND_DIM + d]).exp();
            }
        }
        Ok(c)
    }
}

impl PolicyEnsemble {
    pub fn new(members: Vec<ProbabilisticPolicy>, deterministic: bool) -> Result<Self> {
        if members.is_empty() {
            return Err(ControlError::EmptyEnsemble);
        }
        for m in &members {
            if m.net.input_dim() != LATENT_DIM || m.net.output_dim() != 2 * COMMAND_DIM {
                return Err(ControlError::InvalidPolicy(format!(
                    "member {} has shape {} -> {}",
                    m.seed_id,
                    m.net.input_dim(),
                    m.net.output_dim()
                )));
            }
        }
        Ok(Self { members, deterministic })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Applies every member to every latent sample (dropout off).
    pub fn predict(&self, latents: &LatentSampleSet) -> Result<PredictiveSet> {
        let mut components = Vec::with_capacity(latents.len() * self.members.len());
        for z in &latents.samples {
            for member in &self.members {
                components.push(member.component(z, self.deterministic)?);
            }
        }
        Ok(PredictiveSet {
            components,
            latent_samples: latents.len(),
            members: self.members.len(),
        })
    }

    /// Predicts for a single latent vector given as a slice.
    pub fn predict_latent(&self, z: &[f64]) -> Result<PredictiveSet> {
        if z.len() != LATENT_DIM {
            return Err(NnError::DimensionMismatch {
                expected: LATENT_DIM,
                got: z.len(),
            }
            .into());
        }
        let mut latent = [0.0; LATENT_DIM];
        latent.copy_from_slice(z);
        self.predict(&LatentSampleSet {
            samples: vec![latent],
            source: crate::perception::LatentSource::MeanOnly,
        })
    }
}

/// Per-dimension mean of component means, clamped to the limits.
pub fn aggregate_command(pred: &PredictiveSet, limits: &CommandLimits) -> Result<VelocityCommand> {
    if pred.is_empty() {
        return Err(ControlError::EmptyPredictiveSet);
    }
    let n = pred.len() as f64;
    let mut mean = [0.0; COMMAND_DIM];
    for c in &pred.components {
        for d in 0..COMMAND_DIM {
            mean[d] += c.mean[d];
        }
    }
    Ok(VelocityCommand::from_array(mean.map(|v| v / n)).clamp(limits).0)
}

/// Aleatoric (`E[sigma^2]`) and epistemic (`Var[mu]`, population form) parts
/// of the uniform-mixture variance.
pub fn decompose_uncertainty(pred: &PredictiveSet) -> Result<([f64; COMMAND_DIM], [f64; COMMAND_DIM])> {
    if pred.is_empty() {
        return Err(ControlError::EmptyPredictiveSet);
    }
    let n = pred.len() as f64;
    let mut mean = [0.0; COMMAND_DIM];
    let mut aleatoric = [0.0; COMMAND_DIM];
    for c in &pred.components {
        for d in 0..COMMAND_DIM {
            mean[d] += c.mean[d] / n;
            aleatoric[d] += c.variance[d] / n;
        }
    }
    let mut epistemic = [0.0; COMMAND_DIM];
    for c in &pred.components {
        for d in 0..COMMAND_DIM {
            epistemic[d] += (c.mean[d] - mean[d]).powi(2) / n;
        }
    }
    Ok((aleatoric, epistemic))
}

/// Uniform-mixture mean and variance per dimension (law of total variance).
pub fn mixture_moments(pred: &PredictiveSet) -> Result<([f64; COMMAND_DIM], [f64; COMMAND_DIM])> {
    let (aleatoric, epistemic) = decompose_uncertainty(pred)?;
    let n = pred.len() as f64;
    let mut mean = [0.0; COMMAND_DIM];
    for c in &pred.components {
        for d in 0..COMMAND_DIM {
            mean[d] += c.mean[d] / n;
        }
    }
    let mut var = [0.0; COMMAND_DIM];
    for d in 0..COMMAND_DIM {
        var[d] = aleatoric[d] + epistemic[d];
    }
    Ok((mean, var))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    /// Final training loss per member.
    pub member_train_loss: Vec<f64>,
}

/// Trains `n` members on latents produced by the frozen `perception`
/// encoder. Members differ in initialization and shuffle/noise streams.
pub fn train_ensemble(
    train: &[ControlSample],
    perception: &CmvaeLite,
    n: usize,
    deterministic: bool,
    config: &ControlConfig,
    seed: u64,
) -> Result<(PolicyEnsemble, EnsembleReport)> {
    if train.is_empty() {
        return Err(ControlError::EmptyDataset);
    }
    if n == 0 {
        return Err(ControlError::EmptyEnsemble);
    }
    let encoded: Vec<(Latent, Latent)> = train
        .iter()
        .map(|s| perception.encode(&s.observation.network_input()))
        .collect::<std::result::Result<_, _>>()?;
    let targets: Vec<Vec<f64>> = train.iter().map(|s| s.command.to_array().to_vec()).collect();
    let loss = if deterministic {
        Loss::HeadSquaredError
    } else {
        Loss::GaussianNll
    };

    let mut members = Vec::with_capacity(n);
    let mut member_train_loss = Vec::with_capacity(n);
    for k in 0..n {
        let member_seed = seed::derive(seed, &[0x6d65_6d62, k as u64]);
        let mut policy = ProbabilisticPolicy::new(config.hidden, member_seed)?;
        let mut rng = seed::rng(member_seed, &[0x73_6875_66]);
        let mut adam = AdamState::new(policy.net.num_params(), config.adam);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut last = f64::NAN;
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size.max(1)) {
                let mut grads = vec![0.0; policy.net.num_params()];
                for &i in batch {
                    let (mu, var) = &encoded[i];
                    let z: Vec<f64> = match config.latents {
                        TrainingLatents::MeanOnly => mu.to_vec(),
                        TrainingLatents::Reparam => (0..LATENT_DIM)
                            .map(|d| {
                                let e: f64 = rng.sample(StandardNormal);
                                mu[d] + var[d].sqrt() * e
                            })
                            .collect(),
                    };
                    let tape = policy.net.forward_tape(&z, None)?;
                    let (v, g) = loss.value_and_grad(tape.output(), &targets[i])?;
                    total += v;
                    policy.net.backprop(&tape, &g, &mut grads)?;
                }
                let scale = 1.0 / batch.len() as f64;
                grads.iter_mut().for_each(|g| *g *= scale);
                if grads.iter().any(|g| !g.is_finite()) {
                    return Err(ControlError::Diverged { member: k, epoch });
                }
                nn::adam_step(policy.net.params_mut(), &grads, &mut adam)?;
            }
            last = total / train.len() as f64;
            if !last.is_finite() {
                return Err(ControlError::Diverged { member: k, epoch });
            }
        }
        member_train_loss.push(last);
        members.push(policy);
    }
    Ok((PolicyEnsemble::new(members, deterministic)?, EnsembleReport { member_train_loss }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(comps: &[([f64; 4], [f64; 4])]) -> PredictiveSet {
        PredictiveSet {
            components: comps
                .iter()
                .map(|&(mean, variance)| PredictiveComponent { mean, variance })
                .collect(),
            latent_samples: comps.len(),
            members: 1,
        }
    }

    #[test]
    fn aggregate_examples() {
        let limits = CommandLimits::default();
        let same = set(&[([0.5, 0.1, -0.2, 0.3], [1.0; 4]); 3]);
        let c = aggregate_command(&same, &limits).unwrap();
        assert!((c.vx - 0.5).abs() < 1e-15 && (c.yaw_rate - 0.3).abs() < 1e-15);
        let sym = set(&[([1.0, 0.0, 0.0, 0.0], [0.0; 4]), ([-1.0, 0.0, 0.0, 0.0], [0.0; 4])]);
        assert_eq!(aggregate_command(&sym, &limits).unwrap().vx, 0.0);
        let wild = set(&[([10.0, -10.0, 0.0, 9.0], [0.0; 4])]);
        assert!(aggregate_command(&wild, &limits).unwrap().within(&limits));
        assert!(aggregate_command(&set(&[]), &limits).is_err());
    }

    #[test]
    fn moments_examples() {
        let one = set(&[([0.3, -1.0, 2.0, 0.0], [0.5, 1.0, 2.0, 0.1])]);
        let (m, v) = mixture_moments(&one).unwrap();
        assert_eq!(m, [0.3, -1.0, 2.0, 0.0]);
        assert_eq!(v, [0.5, 1.0, 2.0, 0.1]);

        let two = set(&[([-1.0; 4], [1.0; 4]), ([1.0; 4], [1.0; 4])]);
        let (m, v) = mixture_moments(&two).unwrap();
        assert_eq!(m, [0.0; 4]);
        assert_eq!(v, [2.0; 4]);

        let (alea, epi) = decompose_uncertainty(&set(&[([0.7; 4], [0.2; 4]); 4])).unwrap();
        assert!(epi.iter().all(|&e| e.abs() < 1e-15));
        assert!(alea.iter().all(|&a| (a - 0.2).abs() < 1e-15));

        let (alea, epi) = decompose_uncertainty(&set(&[([0.0; 4], [0.0; 4]), ([2.0; 4], [0.0; 4])])).unwrap();
        assert_eq!(alea, [0.0; 4]);
        assert_eq!(epi, [1.0; 4]);
    }

    #[test]
    fn predict_counts_components() {
        let members = (0..5).map(|k| ProbabilisticPolicy::new(8, k).unwrap()).collect();
        let ens = PolicyEnsemble::new(members, false).unwrap();
        for m in [1usize, 32] {
            let latents = LatentSampleSet {
                samples: vec![[0.1; LATENT_DIM]; m],
                source: crate::perception::LatentSource::MeanOnly,
            };
            let p = ens.predict(&latents).unwrap();
            assert_eq!(p.len(), m * 5);
            assert!(p.components.iter().all(|c| c.variance.iter().all(|&v| v > 0.0)));
        }
        assert!(ens.predict_latent(&[0.0; 3]).is_err());
    }

    #[test]
    fn deterministic_ensemble_reports_zero_variance() {
        let ens = PolicyEnsemble::new(vec![ProbabilisticPolicy::new(8, 1).unwrap()], true).unwrap();
        let p = ens.predict_latent(&[0.2; LATENT_DIM]).unwrap();
        assert_eq!(p.components[0].variance, [0.0; 4]);
    }
}
