// Central finite differences against the analytic gradients of every network
// that gets trained: the variational encoder stack and both policy losses.

use bayesnav_core::control::ProbabilisticPolicy;
use bayesnav_core::nn::{self, DenseNet, Dropout, Loss, Masks};
use bayesnav_core::perception::{CmvaeGrads, CmvaeLite, PerceptionConfig, LATENT_DIM};
use bayesnav_core::seed;
use rand::Rng;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const COORDS: usize = 40;
pub const NETS: u64 = 20;
pub const BATCHES: usize = 5;

/// Worst relative error and the fewest coordinates checked in any batch.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub worst: f64,
    pub min_checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self { worst: 0.0, min_checked: usize::MAX }
    }

    fn add(&mut self, worst: f64, checked: usize) {
        self.worst = self.worst.max(worst);
        self.min_checked = self.min_checked.min(checked);
    }

    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            worst: self.worst.max(other.worst),
            min_checked: self.min_checked.min(other.min_checked),
        }
    }

    pub fn ok(&self) -> bool {
        self.worst <= TOL && self.min_checked >= COORDS / 2
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn relu_pattern(net: &DenseNet, x: &[f64], masks: Option<&Masks>) -> Vec<bool> {
    let tape = net.forward_tape(x, masks.cloned()).unwrap();
    let hidden = tape.pre_activations().len() - 1;
    tape.pre_activations()[..hidden].iter().flatten().map(|&p| p > 0.0).collect()
}

fn gaussian(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Checks `COORDS` random coordinates of one network's gradient.
/// `eval` returns the loss and the ReLU sign pattern; coordinates whose
/// perturbation crosses a kink are skipped.
fn check_coords(
    rng: &mut impl Rng,
    params: &mut [f64],
    analytic: &[f64],
    mut eval: impl FnMut(&[f64]) -> (f64, Vec<bool>),
) -> (f64, usize) {
    let (_, base_pattern) = eval(params);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..COORDS {
        let i = rng.random_range(0..params.len());
        let orig = params[i];
        params[i] = orig + H;
        let (plus, p1) = eval(params);
        params[i] = orig - H;
        let (minus, p2) = eval(params);
        params[i] = orig;
        if p1 != base_pattern || p2 != base_pattern {
            continue;
        }
        checked += 1;
        worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * H)));
    }
    (worst, checked)
}

pub fn policy_case(loss: Loss, net_seed: u64) -> GradCheck {
    let mut rng = seed::rng(net_seed, &[0x6664]);
    let policy = ProbabilisticPolicy::new(64, net_seed).unwrap();
    let mut out = GradCheck::new();
    for _ in 0..BATCHES {
        let inputs: Vec<Vec<f64>> = (0..6).map(|_| gaussian(&mut rng, LATENT_DIM, 1.0)).collect();
        let targets: Vec<Vec<f64>> = (0..6).map(|_| gaussian(&mut rng, 4, 1.0)).collect();
        let (_, g) = nn::backward(&policy.net, loss, &inputs, &targets, None).unwrap();
        let layers = policy.net.layers().to_vec();
        let mut params = policy.net.params().to_vec();
        let (w, checked) = check_coords(&mut rng, &mut params, &g, |p| {
            let net = DenseNet::from_parts(layers.clone(), Dropout::none(), p.to_vec()).unwrap();
            let pattern = inputs.iter().flat_map(|x| relu_pattern(&net, x, None)).collect();
            (nn::batch_loss(&net, loss, &inputs, &targets, None).unwrap(), pattern)
        });
        out.add(w, checked);
    }
    out
}

struct Batch {
    inputs: Vec<Vec<f64>>,
    poses: Vec<Vec<f64>>,
    masks: Vec<Masks>,
    eps: Vec<Vec<f64>>,
}

fn cmvae_loss(m: &CmvaeLite, b: &Batch) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut pattern = Vec::new();
    for i in 0..b.inputs.len() {
        total += m.sample_loss(&b.inputs[i], &b.poses[i], Some(&b.masks[i]), &b.eps[i]).unwrap().total;
        pattern.extend(relu_pattern(&m.encoder, &b.inputs[i], Some(&b.masks[i])));
        let enc = m.encoder.forward_masked(&b.inputs[i], Some(&b.masks[i])).unwrap();
        let z: Vec<f64> = (0..LATENT_DIM).map(|d| enc[d] + (0.5 * enc[LATENT_DIM + d]).exp() * b.eps[i][d]).collect();
        pattern.extend(relu_pattern(&m.decoder, &z, None));
        pattern.extend(relu_pattern(&m.pose_head, &z, None));
    }
    (total, pattern)
}

/// Encoder, decoder and pose head of one randomly initialized model, with
/// fixed dropout masks and reparameterization noise per batch.
pub fn encoder_case(net_seed: u64) -> GradCheck {
    let model = CmvaeLite::new(10, &PerceptionConfig::default(), net_seed).unwrap();
    let mut rng = seed::rng(net_seed, &[0x656e63]);
    let mut out = GradCheck::new();
    for _ in 0..BATCHES {
        let n = 4;
        let batch = Batch {
            inputs: (0..n).map(|_| gaussian(&mut rng, 10, 0.5)).collect(),
            poses: (0..n).map(|_| gaussian(&mut rng, 4, 0.5)).collect(),
            masks: (0..n).map(|_| model.encoder.sample_masks(&mut rng)).collect(),
            eps: (0..n).map(|_| gaussian(&mut rng, LATENT_DIM, 1.0)).collect(),
        };
        let mut grads = CmvaeGrads::zeros(&model);
        for i in 0..n {
            model
                .accumulate_gradient(&batch.inputs[i], &batch.poses[i], Some(batch.masks[i].clone()), &batch.eps[i], &mut grads)
                .unwrap();
        }
        for block in 0..3 {
            let analytic = [&grads.encoder, &grads.decoder, &grads.pose_head][block].clone();
            let net = [&model.encoder, &model.decoder, &model.pose_head][block];
            let mut params = net.params().to_vec();
            let (w, checked) = check_coords(&mut rng, &mut params, &analytic, |p| {
                let mut m = model.clone();
                let target = match block {
                    0 => &mut m.encoder,
                    1 => &mut m.decoder,
                    _ => &mut m.pose_head,
                };
                target.params_mut().copy_from_slice(p);
                cmvae_loss(&m, &batch)
            });
            out.add(w, checked);
        }
    }
    out
}

/// Every trained architecture over `NETS` random initializations.
pub fn all_architectures() -> GradCheck {
    let mut out = GradCheck::new();
    for net_seed in 0..NETS {
        out = out.merge(policy_case(Loss::GaussianNll, net_seed));
        out = out.merge(policy_case(Loss::HeadSquaredError, net_seed));
        out = out.merge(encoder_case(net_seed));
    }
    out
}
