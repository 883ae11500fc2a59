//! Minimal differentiable feed-forward networks.
//!
//! A [`DenseNet`] stores all of its parameters in one flat buffer: for each
//! layer a row-major `outputs x inputs` weight block followed by the bias.
//! Gradients and Adam moments use the same layout, so an optimizer step is a
//! single pass over three slices.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower/upper clamp applied to every log-variance head before `exp`.
pub const LOG_VARIANCE_CLAMP: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite output at layer {layer}")]
    NonFiniteOutput { layer: usize },
    #[error("non-finite gradient in {block}")]
    NonFiniteGradient { block: String },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
        }
    }

    fn num_params(&self) -> usize {
        self.outputs * self.inputs + self.outputs
    }
}

/// Dropout configuration of a network: a rate and the layers whose
/// (post-activation) outputs are dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
    pub sites: Vec<usize>,
}

impl Dropout {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Forward-pass mode. Dropout mode draws fresh inverted-dropout masks from the
/// supplied generator.
pub enum Mode<'a> {
    Deterministic,
    Dropout(&'a mut dyn RngCore),
}

/// One set of inverted-dropout masks, one vector per dropout site (in site
/// order). Entries are `0` or `1 / (1 - p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Masks(Vec<Vec<f64>>);

/// Intermediate values recorded by [`DenseNet::forward_tape`].
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Option<Masks>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-activation values per layer; used by gradient checks to avoid
    /// evaluating finite differences across ReLU kinks.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDenseNet")]
pub struct DenseNet {
    layers: Vec<LayerShape>,
    dropout: Dropout,
    params: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDenseNet {
    layers: Vec<LayerShape>,
    dropout: Dropout,
    params: Vec<f64>,
}

impl TryFrom<RawDenseNet> for DenseNet {
    type Error = NnError;

    fn try_from(raw: RawDenseNet) -> Result<Self> {
        DenseNet::from_parts(raw.layers, raw.dropout, raw.params)
    }
}

impl DenseNet {
    /// Builds a network with uniform He-style fan-in initialization
    /// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and zero biases.
    pub fn new(layers: Vec<LayerShape>, dropout: Dropout, seed: u64) -> Result<Self> {
        validate(&layers, &dropout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layers.iter().map(LayerShape::num_params).sum());
        for layer in &layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            params.extend((0..layer.inputs * layer.outputs).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, layer.outputs));
        }
        Ok(Self {
            layers,
            dropout,
            params,
        })
    }

    /// Multi-layer perceptron over `sizes` with `hidden` activations on all
    /// but the last layer.
    pub fn mlp(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout: Dropout,
        seed: u64,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(NnError::InvalidNetwork("need at least two layer sizes".into()));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| LayerShape::new(sizes[i], sizes[i + 1], if i + 1 == n { output } else { hidden }))
            .collect();
        Self::new(layers, dropout, seed)
    }

    pub fn from_parts(layers: Vec<LayerShape>, dropout: Dropout, params: Vec<f64>) -> Result<Self> {
        validate(&layers, &dropout)?;
        let expected: usize = layers.iter().map(LayerShape::num_params).sum();
        if params.len() != expected {
            return Err(NnError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NnError::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(Self {
            layers,
            dropout,
            params,
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn dropout(&self) -> &Dropout {
        &self.dropout
    }

    /// Returns a copy with a different dropout rate (sites unchanged).
    pub fn with_dropout_rate(&self, rate: f64) -> Result<Self> {
        let dropout = Dropout {
            rate,
            sites: self.dropout.sites.clone(),
        };
        validate(&self.layers, &dropout)?;
        Ok(Self {
            dropout,
            ..self.clone()
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    fn has_dropout(&self) -> bool {
        self.dropout.rate > 0.0 && !self.dropout.sites.is_empty()
    }

    /// Draws one set of masks. Always consumes one uniform per dropped unit,
    /// so mask streams stay aligned whatever the rate.
    pub fn sample_masks<R: RngCore + ?Sized>(&self, rng: &mut R) -> Masks {
        let keep = 1.0 - self.dropout.rate;
        let scale = 1.0 / keep;
        Masks(
            self.dropout
                .sites
                .iter()
                .map(|&site| {
                    (0..self.layers[site].outputs)
                        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn forward(&self, input: &[f64], mode: Mode<'_>) -> Result<Vec<f64>> {
        match mode {
            Mode::Deterministic => self.run(input, None),
            Mode::Dropout(rng) => {
                let masks = self.sample_masks(rng);
                self.run(input, Some(&masks))
            }
        }
    }

    /// Forward pass with explicit masks, no intermediate recording.
    pub fn forward_masked(&self, input: &[f64], masks: Option<&Masks>) -> Result<Vec<f64>> {
        self.run(input, masks)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn run(&self, input: &[f64], masks: Option<&Masks>) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (w, b) = self.block(offset, layer);
            let mut y: Vec<f64> = affine(w, b, &x, layer.inputs)
                .map(|z| layer.activation.apply(z))
                .collect();
            if let Some(mask) = masks.and_then(|m| self.mask_for(m, l)) {
                y.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteOutput { layer: l });
            }
            offset += layer.num_params();
            x = y;
        }
        Ok(x)
    }

    /// Forward pass recording what [`DenseNet::backprop`] needs.
    pub fn forward_tape(&self, input: &[f64], masks: Option<Masks>) -> Result<Tape> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (w, b) = self.block(offset, layer);
            let z: Vec<f64> = affine(w, b, &x, layer.inputs).collect();
            let mut y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            if let Some(mask) = masks.as_ref().and_then(|m| self.mask_for(m, l)) {
                y.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteOutput { layer: l });
            }
            inputs.push(std::mem::replace(&mut x, y));
            pre.push(z);
            offset += layer.num_params();
        }
        Ok(Tape {
            inputs,
            pre,
            masks,
            output: x,
        })
    }

    /// Accumulates `d loss / d params` into `grads` given the gradient with
    /// respect to the network output, and returns the gradient with respect
    /// to the network input.
    pub fn backprop(&self, tape: &Tape, grad_output: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if grad_output.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: grad_output.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut g = grad_output.to_vec();
        let mut end = self.params.len();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let start = end - layer.num_params();
            if let Some(mask) = tape.masks.as_ref().and_then(|m| self.mask_for(m, l)) {
                g.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            for (gv, &z) in g.iter_mut().zip(&tape.pre[l]) {
                *gv *= layer.activation.derivative(z);
            }
            let x = &tape.inputs[l];
            let n_w = layer.inputs * layer.outputs;
            let (gw, gb) = grads[start..end].split_at_mut(n_w);
            for (o, &go) in g.iter().enumerate() {
                if go != 0.0 {
                    gw[o * layer.inputs..(o + 1) * layer.inputs]
                        .iter_mut()
                        .zip(x)
                        .for_each(|(a, &xi)| *a += go * xi);
                }
                gb[o] += go;
            }
            let w = &self.params[start..start + n_w];
            let mut gin = vec![0.0; layer.inputs];
            for (o, &go) in g.iter().enumerate() {
                if go != 0.0 {
                    gin.iter_mut()
                        .zip(&w[o * layer.inputs..(o + 1) * layer.inputs])
                        .for_each(|(a, &wi)| *a += go * wi);
                }
            }
            g = gin;
            end = start;
        }
        Ok(g)
    }

    /// Names the parameter block (layer weights or bias) holding flat index
    /// `index`.
    pub fn block_name(&self, index: usize) -> String {
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let n_w = layer.inputs * layer.outputs;
            if index < offset + n_w {
                return format!("layer {l} weights");
            }
            if index < offset + layer.num_params() {
                return format!("layer {l} bias");
            }
            offset += layer.num_params();
        }
        format!("index {index}")
    }

    fn block(&self, offset: usize, layer: &LayerShape) -> (&[f64], &[f64]) {
        let n_w = layer.inputs * layer.outputs;
        (
            &self.params[offset..offset + n_w],
            &self.params[offset + n_w..offset + n_w + layer.outputs],
        )
    }

    fn mask_for<'m>(&self, masks: &'m Masks, layer: usize) -> Option<&'m [f64]> {
        if !self.has_dropout() {
            return None;
        }
        self.dropout
            .sites
            .iter()
            .position(|&s| s == layer)
            .map(|i| masks.0[i].as_slice())
    }
}

fn affine<'a>(w: &'a [f64], b: &'a [f64], x: &'a [f64], inputs: usize) -> impl Iterator<Item = f64> + 'a {
    w.chunks_exact(inputs)
        .zip(b)
        .map(move |(row, &bias)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bias)
}

fn validate(layers: &[LayerShape], dropout: &Dropout) -> Result<()> {
    if layers.is_empty() {
        return Err(NnError::InvalidNetwork("no layers".into()));
    }
    for pair in layers.windows(2) {
        if pair[0].outputs != pair[1].inputs {
            return Err(NnError::InvalidNetwork(format!(
                "layer dimensions do not chain: {} -> {}",
                pair[0].outputs, pair[1].inputs
            )));
        }
    }
    if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
        return Err(NnError::InvalidNetwork("zero-width layer".into()));
    }
    if !(0.0..1.0).contains(&dropout.rate) {
        return Err(NnError::InvalidNetwork(format!("dropout rate {} outside [0, 1)", dropout.rate)));
    }
    if dropout.sites.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NnError::InvalidNetwork("dropout sites must be strictly increasing".into()));
    }
    if dropout.sites.iter().any(|&s| s >= layers.len()) {
        return Err(NnError::InvalidNetwork("dropout site out of range".into()));
    }
    Ok(())
}

/// Diagonal Gaussian prediction with variance stored as log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianOutput {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl GaussianOutput {
    /// Splits a `[means.., log_variances..]` head.
    pub fn from_head(head: &[f64]) -> Result<Self> {
        if head.len() % 2 != 0 {
            return Err(NnError::DimensionMismatch {
                expected: head.len() + 1,
                got: head.len(),
            });
        }
        let k = head.len() / 2;
        Ok(Self {
            mean: head[..k].to_vec(),
            log_variance: head[k..].to_vec(),
        })
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_variance.iter().map(|&s| clamp_log_variance(s).exp()).collect()
    }
}

#[inline]
pub fn clamp_log_variance(s: f64) -> f64 {
    s.clamp(LOG_VARIANCE_CLAMP.0, LOG_VARIANCE_CLAMP.1)
}

/// Heteroscedastic Gaussian negative log-likelihood without the constant:
/// `sum_i 0.5 * exp(-s_i) * (y_i - mu_i)^2 + 0.5 * s_i`.
pub fn gaussian_nll(pred: &GaussianOutput, target: &[f64]) -> Result<f64> {
    if pred.mean.len() != target.len() || pred.log_variance.len() != target.len() {
        return Err(NnError::DimensionMismatch {
            expected: target.len(),
            got: pred.mean.len().min(pred.log_variance.len()),
        });
    }
    Ok(pred
        .mean
        .iter()
        .zip(&pred.log_variance)
        .zip(target)
        .map(|((&mu, &s), &y)| {
            let s = clamp_log_variance(s);
            0.5 * (-s).exp() * (y - mu).powi(2) + 0.5 * s
        })
        .sum())
}

/// Per-sample losses on a network output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `sum (o - y)^2`, output and target of equal length.
    SquaredError,
    /// Gaussian NLL on a `[mean(k), log_variance(k)]` head.
    GaussianNll,
    /// Squared error on the mean half of a `[mean(k), log_variance(k)]` head;
    /// the variance half receives no gradient.
    HeadSquaredError,
}

impl Loss {
    pub fn value_and_grad(&self, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let k = target.len();
        let expected = match self {
            Loss::SquaredError => k,
            Loss::GaussianNll | Loss::HeadSquaredError => 2 * k,
        };
        if output.len() != expected {
            return Err(NnError::DimensionMismatch {
                expected,
                got: output.len(),
            });
        }
        let mut grad = vec![0.0; output.len()];
        let value = match self {
            Loss::SquaredError | Loss::HeadSquaredError => {
                let mut v = 0.0;
                for i in 0..k {
                    let r = output[i] - target[i];
                    v += r * r;
                    grad[i] = 2.0 * r;
                }
                v
            }
            Loss::GaussianNll => {
                let mut v = 0.0;
                for i in 0..k {
                    let raw = output[k + i];
                    let s = clamp_log_variance(raw);
                    let r = target[i] - output[i];
                    let inv = (-s).exp();
                    v += 0.5 * inv * r * r + 0.5 * s;
                    grad[i] = -inv * r;
                    grad[k + i] = if raw > LOG_VARIANCE_CLAMP.0 && raw < LOG_VARIANCE_CLAMP.1 {
                        0.5 - 0.5 * inv * r * r
                    } else {
                        0.0
                    };
                }
                v
            }
        };
        Ok((value, grad))
    }

    pub fn value(&self, output: &[f64], target: &[f64]) -> Result<f64> {
        self.value_and_grad(output, target).map(|(v, _)| v)
    }
}

fn check_batch(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
    if inputs.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if inputs.len() != targets.len() {
        return Err(NnError::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    Ok(())
}

/// Mask stream replayed by [`batch_loss`] and [`backward`]: one mask set per
/// sample, in batch order.
fn mask_stream(net: &DenseNet, mask_seed: Option<u64>) -> Option<(ChaCha8Rng, &DenseNet)> {
    mask_seed
        .filter(|_| net.has_dropout())
        .map(|s| (ChaCha8Rng::seed_from_u64(s), net))
}

/// Mean batch loss; forward passes only.
pub fn batch_loss(
    net: &DenseNet,
    loss: Loss,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    mask_seed: Option<u64>,
) -> Result<f64> {
    check_batch(inputs, targets)?;
    let mut stream = mask_stream(net, mask_seed);
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let masks = stream.as_mut().map(|(rng, n)| n.sample_masks(rng));
        let out = net.forward_masked(x, masks.as_ref())?;
        total += loss.value(&out, y)?;
    }
    Ok(total / inputs.len() as f64)
}

/// Gradient of the mean batch loss. With `mask_seed` set and dropout
/// configured, masks are drawn per sample from a generator seeded with it,
/// matching [`batch_loss`].
pub fn backward(
    net: &DenseNet,
    loss: Loss,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    mask_seed: Option<u64>,
) -> Result<(f64, Vec<f64>)> {
    check_batch(inputs, targets)?;
    let mut stream = mask_stream(net, mask_seed);
    let mut grads = vec![0.0; net.num_params()];
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let masks = stream.as_mut().map(|(rng, n)| n.sample_masks(rng));
        let tape = net.forward_tape(x, masks)?;
        let (v, g) = loss.value_and_grad(tape.output(), y)?;
        total += v;
        net.backprop(&tape, &g, &mut grads)?;
    }
    let scale = 1.0 / inputs.len() as f64;
    grads.iter_mut().for_each(|g| *g *= scale);
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient {
            block: net.block_name(i),
        });
    }
    Ok((total * scale, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != n {
            return Err(NnError::DimensionMismatch { expected: n, got: len });
        }
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
        let v = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        params[i] -= lr * (m / c1) / ((v / c2).sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net() -> DenseNet {
        DenseNet::from_parts(
            vec![LayerShape::new(2, 2, Activation::Identity)],
            Dropout::none(),
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_is_identity() {
        let out = identity_net().forward(&[1.0, 2.0], Mode::Deterministic).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_rate_dropout_matches_deterministic() {
        let net = DenseNet::mlp(
            &[3, 8, 8, 2],
            Activation::Relu,
            Activation::Identity,
            Dropout {
                rate: 0.0,
                sites: vec![0, 1],
            },
            4,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = [0.3, -1.2, 0.7];
        let det = net.forward(&x, Mode::Deterministic).unwrap();
        for _ in 0..10 {
            assert_eq!(net.forward(&x, Mode::Dropout(&mut rng)).unwrap(), det);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let err = identity_net().forward(&[1.0], Mode::Deterministic).unwrap_err();
        assert_eq!(err, NnError::DimensionMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn non_finite_output_names_layer() {
        let net = DenseNet::from_parts(
            vec![
                LayerShape::new(1, 1, Activation::Identity),
                LayerShape::new(1, 1, Activation::Identity),
            ],
            Dropout::none(),
            vec![1e200, 0.0, 1e200, 0.0],
        )
        .unwrap();
        let err = net.forward(&[1e10], Mode::Deterministic).unwrap_err();
        assert_eq!(err, NnError::NonFiniteOutput { layer: 1 });
    }

    #[test]
    fn construction_rejects_bad_networks() {
        let chain = vec![
            LayerShape::new(2, 3, Activation::Relu),
            LayerShape::new(4, 1, Activation::Identity),
        ];
        assert!(DenseNet::new(chain, Dropout::none(), 0).is_err());
        let ok = vec![LayerShape::new(2, 3, Activation::Relu)];
        let bad_rate = Dropout {
            rate: 1.0,
            sites: vec![0],
        };
        assert!(DenseNet::new(ok.clone(), bad_rate, 0).is_err());
        assert!(DenseNet::from_parts(ok, Dropout::none(), vec![f64::NAN; 9]).is_err());
    }

    #[test]
    fn gaussian_nll_examples() {
        let zero = GaussianOutput {
            mean: vec![1.5, -2.0],
            log_variance: vec![0.0, 0.0],
        };
        assert_eq!(gaussian_nll(&zero, &[1.5, -2.0]).unwrap(), 0.0);
        let p = GaussianOutput {
            mean: vec![0.0],
            log_variance: vec![0.0],
        };
        assert_eq!(gaussian_nll(&p, &[2.0]).unwrap(), 2.0);
        assert!(gaussian_nll(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gaussian_nll_minimized_at_log_squared_residual() {
        let r: f64 = 0.7;
        let best = (r * r).ln();
        let at = |s: f64| {
            gaussian_nll(
                &GaussianOutput {
                    mean: vec![0.0],
                    log_variance: vec![s],
                },
                &[r],
            )
            .unwrap()
        };
        for ds in [-0.5, -0.05, 0.05, 0.5] {
            assert!(at(best) < at(best + ds));
        }
    }

    #[test]
    fn linear_squared_loss_gradient_closed_form() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let b = [0.1, -0.3];
        let net = DenseNet::from_parts(
            vec![LayerShape::new(2, 2, Activation::Identity)],
            Dropout::none(),
            [w.as_slice(), b.as_slice()].concat(),
        )
        .unwrap();
        let x = vec![1.5, -0.5];
        let y = vec![0.2, 0.7];
        let (_, g) = backward(&net, Loss::SquaredError, &[x.clone()], &[y.clone()], None).unwrap();
        for o in 0..2 {
            let r = w[2 * o] * x[0] + w[2 * o + 1] * x[1] + b[o] - y[o];
            for i in 0..2 {
                assert!((g[2 * o + i] - 2.0 * r * x[i]).abs() < 1e-12);
            }
            assert!((g[4 + o] - 2.0 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let net = identity_net();
        let x = vec![0.4, -0.9];
        let (loss, g) = backward(&net, Loss::SquaredError, &[x.clone()], &[x], None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_empty_batch() {
        assert_eq!(
            backward(&identity_net(), Loss::SquaredError, &[], &[], None).unwrap_err(),
            NnError::EmptyBatch
        );
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(3, AdamConfig::default());
        adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut x = vec![1.0];
        let mut st = AdamState::new(
            1,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut st).unwrap();
        }
        assert!(x[0].abs() < 0.05, "x = {}", x[0]);
        assert_eq!(st.step_count, 200);
    }

    #[test]
    fn adam_is_deterministic_and_checks_shapes() {
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut st = AdamState::new(2, AdamConfig::default());
            adam_step(&mut p, &[0.5, -0.2], &mut st).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());
        let mut st = AdamState::new(2, AdamConfig::default());
        assert!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut st).is_err());
    }

    #[test]
    fn serde_roundtrip_validates() {
        let net = DenseNet::mlp(&[3, 4, 2], Activation::Tanh, Activation::Identity, Dropout::none(), 1).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        let broken = json.replace("\"inputs\":4", "\"inputs\":5");
        assert!(serde_json::from_str::<DenseNet>(&broken).is_err());
    }
}
