//! Cross-modal variational encoder over observation vectors.
//!
//! The encoder maps a normalized observation to a diagonal Gaussian over a
//! 10-dimensional latent. Two decoders hang off the latent: one reconstructs
//! the observation, one regresses the nearest gate's pose. Dropout in the
//! encoder's hidden layers stays available at inference, so repeated
//! stochastic passes sample encoder parameters (Monte Carlo dropout).

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{PerceptionSample, RANGE_NORMALIZER};
use crate::nn::{self, clamp_log_variance, Activation, AdamConfig, AdamState, DenseNet, Dropout, Masks, NnError};
use crate::seed;

pub const LATENT_DIM: usize = 10;
pub const POSE_DIM: usize = 4;

pub type Latent = [f64; LATENT_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("need at least {needed} latent samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T, E = PerceptionError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub pose_hidden: usize,
    pub dropout_rate: f64,
    pub beta_kl: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: 64,
            decoder_hidden: 64,
            pose_hidden: 32,
            dropout_rate: 0.1,
            beta_kl: 0.01,
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmvaeLite {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub pose_head: DenseNet,
    pub beta_kl: f64,
}

/// Where a latent sample set came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    /// Dropout on, one reparameterized draw per pass.
    McDropout,
    /// Dropout off, reparameterized draws around the deterministic encoding.
    ReparamOnly,
    /// Deterministic mean.
    MeanOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSampleSet {
    pub samples: Vec<Latent>,
    pub source: LatentSource,
}

impl LatentSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Pose label normalized the same way as network inputs.
pub fn normalized_pose(pose: &[f64; 4]) -> [f64; 4] {
    [pose[0] / RANGE_NORMALIZER, pose[1], pose[2], pose[3]]
}

/// `KL(N(mu, exp(s)) || N(0, I))` for a diagonal Gaussian.
pub fn kl_to_standard_normal(mu: &[f64], log_var: &[f64]) -> f64 {
    mu.iter()
        .zip(log_var)
        .map(|(&m, &s)| {
            let s = clamp_log_variance(s);
            0.5 * (s.exp() + m * m - 1.0 - s)
        })
        .sum()
}

/// Trace of the sample covariance (denominator `M - 1`).
pub fn latent_dispersion(set: &LatentSampleSet) -> Result<f64> {
    let m = set.samples.len();
    if m < 2 {
        return Err(PerceptionError::TooFewSamples { needed: 2, got: m });
    }
    let mut trace = 0.0;
    for d in 0..LATENT_DIM {
        let mean = set.samples.iter().map(|z| z[d]).sum::<f64>() / m as f64;
        trace += set.samples.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    }
    Ok(trace)
}

/// Per-sample training loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reconstruction: f64,
    pub pose: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms) {
        self.reconstruction += o.reconstruction;
        self.pose += o.pose;
        self.kl += o.kl;
        self.total += o.total;
    }

    fn scale(&mut self, k: f64) {
        self.reconstruction *= k;
        self.pose *= k;
        self.kl *= k;
        self.total *= k;
    }
}

/// Gradient buffers for the three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct CmvaeGrads {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub pose_head: Vec<f64>,
}

impl CmvaeGrads {
    pub fn zeros(model: &CmvaeLite) -> Self {
        Self {
            encoder: vec![0.0; model.encoder.num_params()],
            decoder: vec![0.0; model.decoder.num_params()],
            pose_head: vec![0.0; model.pose_head.num_params()],
        }
    }
}

impl CmvaeLite {
    pub fn new(obs_dim: usize, config: &PerceptionConfig, seed: u64) -> Result<Self> {
        let encoder = DenseNet::mlp(
            &[obs_dim, config.encoder_hidden, config.encoder_hidden, 2 * LATENT_DIM],
            Activation::Relu,
            Activation::Identity,
            Dropout {
                rate: config.dropout_rate,
                sites: vec![0, 1],
            },
            seed::derive(seed, &[1]),
        )?;
        let decoder = DenseNet::mlp(
            &[LATENT_DIM, config.decoder_hidden, obs_dim],
            Activation::Relu,
            Activation::Identity,
            Dropout::none(),
            seed::derive(seed, &[2]),
        )?;
        let pose_head = DenseNet::mlp(
            &[LATENT_DIM, config.pose_hidden, POSE_DIM],
            Activation::Relu,
            Activation::Identity,
            Dropout::none(),
            seed::derive(seed, &[3]),
        )?;
        Self::from_parts(encoder, decoder, pose_head, config.beta_kl)
    }

    pub fn from_parts(encoder: DenseNet, decoder: DenseNet, pose_head: DenseNet, beta_kl: f64) -> Result<Self> {
        if encoder.output_dim() != 2 * LATENT_DIM {
            return Err(PerceptionError::InvalidModel(format!(
                "encoder must output {} values",
                2 * LATENT_DIM
            )));
        }
        if decoder.input_dim() != LATENT_DIM || decoder.output_dim() != encoder.input_dim() {
            return Err(PerceptionError::InvalidModel("decoder shape".into()));
        }
        if pose_head.input_dim() != LATENT_DIM || pose_head.output_dim() != POSE_DIM {
            return Err(PerceptionError::InvalidModel("pose head shape".into()));
        }
        if encoder.dropout().sites.is_empty() {
            return Err(PerceptionError::InvalidModel("encoder needs a dropout site".into()));
        }
        if !(beta_kl > 0.0) {
            return Err(PerceptionError::InvalidModel("beta_kl must be positive".into()));
        }
        Ok(Self {
            encoder,
            decoder,
            pose_head,
            beta_kl,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Deterministic encoding (dropout off): mean and variance.
    pub fn encode(&self, input: &[f64]) -> Result<(Latent, Latent)> {
        let out = self.encoder.forward(input, nn::Mode::Deterministic)?;
        Ok(split_head(&out))
    }

    /// `m` latent samples. With `dropout` each sample uses a fresh mask set;
    /// with `reparam` each sample adds one `sigma * eps` draw.
    pub fn sample_latents<R: RngCore + ?Sized>(
        &self,
        input: &[f64],
        m: usize,
        dropout: bool,
        reparam: bool,
        rng: &mut R,
    ) -> Result<LatentSampleSet> {
        if m == 0 {
            return Err(PerceptionError::TooFewSamples { needed: 1, got: 0 });
        }
        let source = match (dropout, reparam) {
            (true, _) => LatentSource::McDropout,
            (false, true) => LatentSource::ReparamOnly,
            (false, false) => LatentSource::MeanOnly,
        };
        let fixed = if dropout { None } else { Some(self.encode(input)?) };
        let mut samples = Vec::with_capacity(m);
        for _ in 0..m {
            let (mu, var) = match &fixed {
                Some(f) => *f,
                None => {
                    let masks = self.encoder.sample_masks(rng);
                    split_head(&self.encoder.forward_masked(input, Some(&masks))?)
                }
            };
            let mut z = mu;
            if reparam {
                for d in 0..LATENT_DIM {
                    let e: f64 = rng.sample(StandardNormal);
                    z[d] += var[d].sqrt() * e;
                }
            }
            samples.push(z);
        }
        Ok(LatentSampleSet { samples, source })
    }

    /// Monte Carlo dropout posterior samples: `m` stochastic encoder passes,
    /// each followed by one reparameterized draw.
    pub fn mc_encode<R: RngCore + ?Sized>(&self, input: &[f64], m: usize, rng: &mut R) -> Result<LatentSampleSet> {
        self.sample_latents(input, m, true, true, rng)
    }

    /// Pose head applied to the deterministic mean.
    pub fn predict_pose(&self, input: &[f64]) -> Result<[f64; POSE_DIM]> {
        let (mu, _) = self.encode(input)?;
        let out = self.pose_head.forward(&mu, nn::Mode::Deterministic)?;
        Ok([out[0], out[1], out[2], out[3]])
    }

    /// Loss for one sample given fixed masks and reparameterization noise.
    pub fn sample_loss(&self, input: &[f64], pose: &[f64], masks: Option<&Masks>, eps: &[f64]) -> Result<LossTerms> {
        let enc = self.encoder.forward_masked(input, masks)?;
        let (mu, s) = enc.split_at(LATENT_DIM);
        let z = reparameterize(mu, s, eps);
        let recon = self.decoder.forward_masked(&z, None)?;
        let pred = self.pose_head.forward_masked(&z, None)?;
        Ok(self.terms(input, pose, mu, s, &recon, &pred))
    }

    fn terms(&self, input: &[f64], pose: &[f64], mu: &[f64], s: &[f64], recon: &[f64], pred: &[f64]) -> LossTerms {
        let reconstruction: f64 = recon.iter().zip(input).map(|(a, b)| (a - b).powi(2)).sum();
        let pose_err: f64 = pred.iter().zip(pose).map(|(a, b)| (a - b).powi(2)).sum();
        let kl = kl_to_standard_normal(mu, s);
        LossTerms {
            reconstruction,
            pose: pose_err,
            kl,
            total: reconstruction + pose_err + self.beta_kl * kl,
        }
    }

    /// Accumulates the gradient of [`CmvaeLite::sample_loss`] into `grads`.
    pub fn accumulate_gradient(
        &self,
        input: &[f64],
        pose: &[f64],
        masks: Option<Masks>,
        eps: &[f64],
        grads: &mut CmvaeGrads,
    ) -> Result<LossTerms> {
        let enc_tape = self.encoder.forward_tape(input, masks)?;
        let (mu, s) = enc_tape.output().split_at(LATENT_DIM);
        let z = reparameterize(mu, s, eps);
        let dec_tape = self.decoder.forward_tape(&z, None)?;
        let pose_tape = self.pose_head.forward_tape(&z, None)?;
        let terms = self.terms(input, pose, mu, s, dec_tape.output(), pose_tape.output());

        let g_recon: Vec<f64> = dec_tape.output().iter().zip(input).map(|(a, b)| 2.0 * (a - b)).collect();
        let g_pose: Vec<f64> = pose_tape.output().iter().zip(pose).map(|(a, b)| 2.0 * (a - b)).collect();
        let dz_dec = self.decoder.backprop(&dec_tape, &g_recon, &mut grads.decoder)?;
        let dz_pose = self.pose_head.backprop(&pose_tape, &g_pose, &mut grads.pose_head)?;

        let mut g_enc = vec![0.0; 2 * LATENT_DIM];
        for d in 0..LATENT_DIM {
            let dz = dz_dec[d] + dz_pose[d];
            let raw = s[d];
            let sc = clamp_log_variance(raw);
            let inside = raw > nn::LOG_VARIANCE_CLAMP.0 && raw < nn::LOG_VARIANCE_CLAMP.1;
            g_enc[d] = dz + self.beta_kl * mu[d];
            g_enc[LATENT_DIM + d] = if inside {
                dz * eps[d] * 0.5 * (0.5 * sc).exp() + self.beta_kl * 0.5 * (sc.exp() - 1.0)
            } else {
                0.0
            };
        }
        self.encoder.backprop(&enc_tape, &g_enc, &mut grads.encoder)?;
        Ok(terms)
    }

    /// Mean loss over `samples` with dropout off and `eps = 0`.
    pub fn evaluate(&self, samples: &[PerceptionSample]) -> Result<LossTerms> {
        if samples.is_empty() {
            return Err(PerceptionError::EmptyDataset);
        }
        let zero = [0.0; LATENT_DIM];
        let mut acc = LossTerms::default();
        for s in samples {
            let t = self.sample_loss(&s.observation.network_input(), &normalized_pose(&s.pose), None, &zero)?;
            acc.add(&t);
        }
        acc.scale(1.0 / samples.len() as f64);
        Ok(acc)
    }

    /// Root mean squared pose error (normalized units) of the pose head on the
    /// deterministic mean encoding.
    pub fn pose_rmse(&self, samples: &[PerceptionSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(PerceptionError::EmptyDataset);
        }
        let mut sq = 0.0;
        for s in samples {
            let pred = self.predict_pose(&s.observation.network_input())?;
            let target = normalized_pose(&s.pose);
            sq += pred.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok((sq / (samples.len() * POSE_DIM) as f64).sqrt())
    }
}

fn split_head(out: &[f64]) -> (Latent, Latent) {
    let mut mu = [0.0; LATENT_DIM];
    let mut var = [0.0; LATENT_DIM];
    for d in 0..LATENT_DIM {
        mu[d] = out[d];
        var[d] = clamp_log_variance(out[LATENT_DIM + d]).exp();
    }
    (mu, var)
}

fn reparameterize(mu: &[f64], s: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(s)
        .zip(eps)
        .map(|((&m, &sv), &e)| m + (0.5 * clamp_log_variance(sv)).exp() * e)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_train_loss: Vec<f64>,
    pub final_train: LossTerms,
    pub final_eval: Option<LossTerms>,
}

/// Trains on `train` with dropout active and reparameterized latents.
/// Deterministic per `seed`.
pub fn train_cmvae(
    train: &[PerceptionSample],
    eval: &[PerceptionSample],
    config: &PerceptionConfig,
    seed: u64,
) -> Result<(CmvaeLite, TrainReport)> {
    let first = train.first().ok_or(PerceptionError::EmptyDataset)?;
    let obs_dim = first.observation.features.len();
    let mut model = CmvaeLite::new(obs_dim, config, seed)?;
    let inputs: Vec<Vec<f64>> = train.iter().map(|s| s.observation.network_input()).collect();
    let poses: Vec<[f64; 4]> = train.iter().map(|s| normalized_pose(&s.pose)).collect();
    let mut rng = seed::rng(seed, &[0x7472_6169_6e]);
    let mut adam = [
        AdamState::new(model.encoder.num_params(), config.adam),
        AdamState::new(model.decoder.num_params(), config.adam),
        AdamState::new(model.pose_head.num_params(), config.adam),
    ];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_train_loss = Vec::with_capacity(config.epochs);
    let batch_size = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(batch_size) {
            let mut grads = CmvaeGrads::zeros(&model);
            for &i in batch {
                let masks = model.encoder.sample_masks(&mut rng);
                let eps: Vec<f64> = (0..LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect();
                let t = model.accumulate_gradient(&inputs[i], &poses[i], Some(masks), &eps, &mut grads)?;
                epoch_total += t.total;
            }
            let k = 1.0 / batch.len() as f64;
            let [a0, a1, a2] = &mut adam;
            for (net, g, st) in [
                (&mut model.encoder, &mut grads.encoder, a0),
                (&mut model.decoder, &mut grads.decoder, a1),
                (&mut model.pose_head, &mut grads.pose_head, a2),
            ] {
                g.iter_mut().for_each(|v| *v *= k);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(PerceptionError::Diverged { epoch });
                }
                nn::adam_step(net.params_mut(), g, st)?;
            }
        }
        let mean = epoch_total / train.len() as f64;
        if !mean.is_finite() {
            return Err(PerceptionError::Diverged { epoch });
        }
        epoch_train_loss.push(mean);
    }
    let final_train = model.evaluate(train)?;
    let final_eval = if eval.is_empty() { None } else { Some(model.evaluate(eval)?) };
    Ok((
        model,
        TrainReport {
            epoch_train_loss,
            final_train,
            final_eval,
        },
    ))
}
