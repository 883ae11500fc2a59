// Calibration references: targets drawn from the predictions themselves,
// and predictions that always lie above their targets.

use bayesnav_core::metrics::{regression_ece, EceAggregation, CalibrationReport};
use bayesnav_core::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type Mixture = Vec<(f64, f64)>;

pub fn random_mixture(rng: &mut impl Rng) -> Mixture {
    let k = rng.random_range(1..=4);
    (0..k).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(0.05..2.0))).collect()
}

pub fn draw(mix: &Mixture, rng: &mut impl Rng) -> f64 {
    let (mu, var) = mix[rng.random_range(0..mix.len())];
    Normal::new(mu, var.sqrt()).unwrap().sample(rng)
}

/// ECE of 10^4 random mixtures scored against draws from themselves.
pub fn self_consistent() -> CalibrationReport {
    let mut rng = seed::rng(77, &[]);
    let preds: Vec<Mixture> = (0..10_000).map(|_| random_mixture(&mut rng)).collect();
    let ys: Vec<f64> = preds.iter().map(|p| draw(p, &mut rng)).collect();
    regression_ece(&preds, &ys, 10, EceAggregation::Squared).unwrap()
}

/// Point masses above every target: `F = 0`, so every level is covered and
/// `ece = (1/m) sum_j (p_j - 1)^2` (or `|p_j - 1|`).
pub fn always_over(aggregation: EceAggregation) -> (f64, f64) {
    let ys: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
    let preds: Vec<Mixture> = ys.iter().map(|y| vec![(y + 1.0, 0.0), (y + 2.0, 0.0)]).collect();
    let got = regression_ece(&preds, &ys, 10, aggregation).unwrap().ece;
    let want = (1..10)
        .map(|j| {
            let p = j as f64 / 10.0;
            match aggregation {
                EceAggregation::Squared => (p - 1.0) * (p - 1.0),
                EceAggregation::Absolute => 1.0 - p,
            }
        })
        .sum::<f64>()
        / 10.0;
    (got, want)
}
