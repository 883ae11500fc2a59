#[path = "oracles/ece.rs"]
#[allow(dead_code)]
mod oracles;

use bayesnav_core::metrics::{
    density_summary, detect_modes, regression_ece, BandwidthRule, EceAggregation, MetricsError,
};
use bayesnav_core::seed;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use oracles::{random_mixture, Mixture};
use rand_distr::StandardNormal;

#[test]
fn self_consistent_targets_are_calibrated() {
    let r = oracles::self_consistent();
    assert!(r.ece < 1e-3, "ece {}", r.ece);
    assert_eq!(r.levels.len(), 9);
    for (p, e) in r.levels.iter().zip(&r.empirical) {
        assert!((p - e).abs() < 0.02, "{p} -> {e}");
    }
}

#[test]
fn overconfidence_is_penalised() {
    let mut rng = seed::rng(78, &[]);
    let ys: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let calibrated: Vec<Mixture> = ys.iter().map(|_| vec![(0.0, 1.0)]).collect();
    let narrow: Vec<Mixture> = ys.iter().map(|_| vec![(0.0, 0.05)]).collect();
    let point: Vec<Mixture> = ys.iter().map(|_| vec![(0.0, 0.0)]).collect();
    let ece = |p: &[Mixture]| regression_ece(p, &ys, 10, EceAggregation::Squared).unwrap().ece;
    assert!(ece(&calibrated) < ece(&narrow));
    assert!(ece(&narrow) < ece(&point));
}

#[test]
fn always_over_closed_form_and_absolute_flag() {
    for aggregation in [EceAggregation::Squared, EceAggregation::Absolute] {
        let (got, want) = oracles::always_over(aggregation);
        assert_eq!(got, want, "{aggregation:?}");
    }
}

#[test]
fn input_errors() {
    let p = vec![vec![(0.0, 1.0)]; 5];
    assert!(matches!(
        regression_ece(&p, &[0.0; 5], 10, EceAggregation::Squared),
        Err(MetricsError::TooFew { .. })
    ));
    assert!(regression_ece(&[], &[], 10, EceAggregation::Squared).is_err());
    let p = vec![vec![(0.0, 1.0)]; 12];
    assert!(regression_ece(&p, &[0.0; 11], 10, EceAggregation::Squared).is_err());
    assert!(detect_modes(&[1.0; 19], BandwidthRule::Silverman).is_err());
}

proptest! {
    #[test]
    fn ece_bounded_and_shuffle_invariant(seed_val in 0u64..1000, n in 10usize..200) {
        let mut rng = seed::rng(seed_val, &[1]);
        let preds: Vec<Mixture> = (0..n).map(|_| random_mixture(&mut rng)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let r = regression_ece(&preds, &ys, 10, EceAggregation::Squared).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.ece));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let p2: Vec<Mixture> = idx.iter().map(|&i| preds[i].clone()).collect();
        let y2: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let r2 = regression_ece(&p2, &y2, 10, EceAggregation::Squared).unwrap();
        prop_assert_eq!(r.ece, r2.ece);
    }
}

/// Peaks of a histogram smoothed with a 3-bin moving average, keeping bins
/// that reach 20% of the tallest.
fn histogram_peaks(xs: &[f64], bins: usize) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &x in xs {
        counts[(((x - lo) / w) as usize).min(bins - 1)] += 1.0;
    }
    let smooth: Vec<f64> = (0..bins)
        .map(|i| {
            let a = i.saturating_sub(1);
            let b = (i + 1).min(bins - 1);
            counts[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
        })
        .collect();
    let top = smooth.iter().cloned().fold(0.0, f64::max);
    (1..bins - 1)
        .filter(|&i| smooth[i] >= 0.2 * top && smooth[i] > smooth[i - 1] && smooth[i] >= smooth[i + 1])
        .map(|i| lo + (i as f64 + 0.5) * w)
        .collect()
}

#[test]
fn unimodal_and_bimodal_reference_samples() {
    let mut rng = seed::rng(5, &[]);
    for _ in 0..20 {
        let xs: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        assert_eq!(detect_modes(&xs, BandwidthRule::Silverman).unwrap().mode_count, 1);

        let xs: Vec<f64> = (0..500)
            .map(|i| rng.sample::<f64, _>(StandardNormal) + if i % 2 == 0 { -3.0 } else { 3.0 })
            .collect();
        let r = detect_modes(&xs, BandwidthRule::Silverman).unwrap();
        assert_eq!(r.mode_count, 2, "{:?}", r.mode_locations);
        let hist = histogram_peaks(&xs, 24);
        assert_eq!(hist.len(), 2, "histogram oracle {hist:?}");
        for (k, target) in [-3.0, 3.0].iter().enumerate() {
            assert!((r.mode_locations[k] - target).abs() <= 0.5);
            assert!((r.mode_locations[k] - hist[k]).abs() <= 0.75);
        }
    }
}

#[test]
fn identical_samples_one_mode() {
    let r = detect_modes(&[2.5; 40], BandwidthRule::Silverman).unwrap();
    assert_eq!(r.mode_count, 1);
    assert!((r.mode_locations[0] - 2.5).abs() < 1e-6);
    assert!(r.bandwidth > 0.0);
}

#[test]
fn modes_are_affine_equivariant() {
    let mut rng = seed::rng(6, &[]);
    for case in 0..30 {
        let sep = rng.random_range(0.0..6.0);
        let xs: Vec<f64> = (0..300)
            .map(|i| rng.sample::<f64, _>(StandardNormal) + if i % 3 == 0 { sep } else { 0.0 })
            .collect();
        let base = detect_modes(&xs, BandwidthRule::Silverman).unwrap();
        let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(-50.0..50.0));
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let moved = detect_modes(&ys, BandwidthRule::Silverman).unwrap();
        assert_eq!(base.mode_count, moved.mode_count, "case {case}");
        assert!((moved.bandwidth - a * base.bandwidth).abs() <= 1e-9 * moved.bandwidth);
        for (m0, m1) in base.mode_locations.iter().zip(&moved.mode_locations) {
            assert!((a * m0 + b - m1).abs() <= 1e-6 * (1.0 + b.abs() + a), "case {case}");
        }
    }
}

fn sort_oracle(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

proptest! {
    #[test]
    fn density_summary_matches_sort_oracle(xs in prop::collection::vec(-1e3..1e3f64, 2..300)) {
        let d = density_summary(&xs).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((d.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        prop_assert!((d.std - sd).abs() <= 1e-9 * (1.0 + sd));
        for (got, q) in [(d.q05, 0.05), (d.q50, 0.5), (d.q95, 0.95)] {
            prop_assert!((got - sort_oracle(&xs, q)).abs() <= 1e-9);
        }
        prop_assert!(d.q05 <= d.q50 && d.q50 <= d.q95);
    }
}

#[test]
fn density_summary_examples() {
    let d = density_summary(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(d.mean, 2.0);
    let c = density_summary(&[4.0; 7]).unwrap();
    assert_eq!(c.std, 0.0);
    assert_eq!((c.q05, c.q50, c.q95), (4.0, 4.0, 4.0));
    assert!(density_summary(&[1.0]).is_err());
}
