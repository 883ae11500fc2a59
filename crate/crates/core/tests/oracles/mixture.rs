// Mixture moments against brute-force sampling of the uniform mixture.

use bayesnav_core::control::{decompose_uncertainty, mixture_moments, PredictiveComponent, PredictiveSet, COMMAND_DIM};
use bayesnav_core::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const CASES: usize = 100;
pub const DRAWS: usize = 1_000_000;

pub fn random_set(rng: &mut impl Rng, m: usize, n: usize) -> PredictiveSet {
    let components = (0..m * n)
        .map(|_| PredictiveComponent {
            mean: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
            variance: std::array::from_fn(|_| rng.random_range(0.01..1.5)),
        })
        .collect();
    PredictiveSet {
        components,
        latent_samples: m,
        members: n,
    }
}

/// `DRAWS` samples from the uniform mixture, per dimension.
pub fn sampled_moments(set: &PredictiveSet, rng: &mut impl Rng) -> ([f64; COMMAND_DIM], [f64; COMMAND_DIM]) {
    let mut sum = [0.0; COMMAND_DIM];
    let mut sq = [0.0; COMMAND_DIM];
    for _ in 0..DRAWS {
        let c = &set.components[rng.random_range(0..set.len())];
        for d in 0..COMMAND_DIM {
            let x = Normal::new(c.mean[d], c.variance[d].sqrt()).unwrap().sample(rng);
            sum[d] += x;
            sq[d] += x * x;
        }
    }
    let mean = sum.map(|s| s / DRAWS as f64);
    let var = std::array::from_fn(|d| sq[d] / DRAWS as f64 - mean[d] * mean[d]);
    (mean, var)
}

/// Worst deviations over all cases and dimensions.
#[derive(Clone, Copy, Debug, Default)]
pub struct MixtureCheck {
    /// `|mean - sampled mean| / mixture sd`.
    pub mean_err: f64,
    /// `|var - sampled var| / var`.
    pub var_rel_err: f64,
    /// `|aleatoric + epistemic - var|`.
    pub identity_err: f64,
}

impl MixtureCheck {
    pub fn ok(&self) -> bool {
        self.mean_err <= 0.01 && self.var_rel_err <= 0.01 && self.identity_err <= 1e-12
    }
}

pub fn check_random_sets() -> MixtureCheck {
    let mut rng = seed::rng(2024, &[]);
    let mut out = MixtureCheck::default();
    for case in 0..CASES {
        let (m, n) = [(1, 1), (1, 5), (32, 1), (32, 5), (3, 2)][case % 5];
        let set = random_set(&mut rng, m, n);
        let (mean, var) = mixture_moments(&set).unwrap();
        let (mc_mean, mc_var) = sampled_moments(&set, &mut rng);
        let (alea, epi) = decompose_uncertainty(&set).unwrap();
        for d in 0..COMMAND_DIM {
            out.mean_err = out.mean_err.max((mean[d] - mc_mean[d]).abs() / var[d].sqrt());
            out.var_rel_err = out.var_rel_err.max((var[d] - mc_var[d]).abs() / var[d]);
            out.identity_err = out.identity_err.max((alea[d] + epi[d] - var[d]).abs());
        }
    }
    out
}
