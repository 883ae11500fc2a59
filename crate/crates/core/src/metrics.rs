//! Calibration, density and multimodality instruments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{PredictiveSet, COMMAND_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("predictions ({predictions}) and targets ({targets}) differ in length")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

pub const MIN_ECE_SAMPLES: usize = 10;
pub const MIN_MODE_SAMPLES: usize = 20;
pub const KDE_GRID: usize = 512;
pub const MODE_PROMINENCE: f64 = 0.05;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of a uniform mixture of `(mean, variance)` components at `y`.
/// Zero-variance components contribute a step at their mean.
pub fn mixture_cdf(components: &[(f64, f64)], y: f64) -> f64 {
    let sum: f64 = components
        .iter()
        .map(|&(mu, var)| {
            if var > 0.0 {
                normal_cdf((y - mu) / var.sqrt())
            } else if y >= mu {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    sum / components.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EceAggregation {
    #[default]
    Squared,
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub levels: Vec<f64>,
    pub empirical: Vec<f64>,
    pub ece: f64,
}

/// Interior levels `j/m`, `j = 1..m-1`.
pub fn calibration_levels(m: usize) -> Vec<f64> {
    (1..m).map(|j| j as f64 / m as f64).collect()
}

/// Calibration of one-dimensional mixture predictions against targets:
/// `ece = (1/m) * sum_j gap(p_j, p_hat_j)` over the `m - 1` interior levels.
pub fn regression_ece(
    predictions: &[Vec<(f64, f64)>],
    targets: &[f64],
    m_levels: usize,
    aggregation: EceAggregation,
) -> Result<CalibrationReport> {
    if predictions.is_empty() || targets.is_empty() {
        return Err(MetricsError::Empty);
    }
    if predictions.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if targets.len() < MIN_ECE_SAMPLES {
        return Err(MetricsError::TooFew {
            needed: MIN_ECE_SAMPLES,
            got: targets.len(),
        });
    }
    if m_levels < 2 {
        return Err(MetricsError::Invalid("need m_levels >= 2".into()));
    }
    if predictions
        .iter()
        .any(|p| p.is_empty() || p.iter().any(|&(mu, v)| !mu.is_finite() || !(v >= 0.0) || !v.is_finite()))
    {
        return Err(MetricsError::Invalid("each prediction needs finite components with variance >= 0".into()));
    }
    let cdfs: Vec<f64> = predictions.iter().zip(targets).map(|(p, &y)| mixture_cdf(p, y)).collect();
    let levels = calibration_levels(m_levels);
    let t = cdfs.len() as f64;
    let empirical: Vec<f64> = levels
        .iter()
        .map(|&p| cdfs.iter().filter(|&&f| f <= p).count() as f64 / t)
        .collect();
    let ece = levels
        .iter()
        .zip(&empirical)
        .map(|(p, e)| match aggregation {
            EceAggregation::Squared => (p - e).powi(2),
            EceAggregation::Absolute => (p - e).abs(),
        })
        .sum::<f64>()
        / m_levels as f64;
    Ok(CalibrationReport { levels, empirical, ece })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandCalibration {
    pub per_dimension: Vec<CalibrationReport>,
    /// Mean of the per-dimension scores.
    pub ece: f64,
    pub dimension_reduction: String,
}

/// Scores every command dimension separately and averages.
pub fn command_ece(
    predictions: &[PredictiveSet],
    targets: &[[f64; COMMAND_DIM]],
    m_levels: usize,
    aggregation: EceAggregation,
) -> Result<CommandCalibration> {
    let mut per_dimension = Vec::with_capacity(COMMAND_DIM);
    for d in 0..COMMAND_DIM {
        let preds: Vec<Vec<(f64, f64)>> = predictions.iter().map(|p| p.marginal(d)).collect();
        let ys: Vec<f64> = targets.iter().map(|t| t[d]).collect();
        per_dimension.push(regression_ece(&preds, &ys, m_levels, aggregation)?);
    }
    let ece = per_dimension.iter().map(|r| r.ece).sum::<f64>() / COMMAND_DIM as f64;
    Ok(CommandCalibration {
        per_dimension,
        ece,
        dimension_reduction: "mean_over_dimensions".into(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    #[default]
    Silverman,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode_count: usize,
    pub mode_locations: Vec<f64>,
    pub bandwidth: f64,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Silverman's rule of thumb, floored so identical samples still get a kernel.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let s = sorted(values);
    let (mean, sd) = mean_std(&s);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        _ => 0.0,
    };
    let h = 0.9 * spread * (s.len() as f64).powf(-0.2);
    let floor = 1e-6 * mean.abs().max(1.0);
    h.max(floor)
}

/// Counts peaks of a Gaussian KDE evaluated on a fixed grid.
pub fn detect_modes(samples: &[f64], rule: BandwidthRule) -> Result<ModeReport> {
    if samples.len() < MIN_MODE_SAMPLES {
        return Err(MetricsError::TooFew {
            needed: MIN_MODE_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::Invalid("non-finite sample".into()));
    }
    let h = match rule {
        BandwidthRule::Silverman => silverman_bandwidth(samples),
        BandwidthRule::Fixed(h) if h > 0.0 && h.is_finite() => h,
        BandwidthRule::Fixed(h) => return Err(MetricsError::Invalid(format!("bandwidth {h}"))),
    };
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (KDE_GRID - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID).map(|i| lo + step * i as f64).collect();
    let density: Vec<f64> = grid
        .iter()
        .map(|&x| samples.iter().map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum())
        .collect();

    // Local maxima; a flat run of equal values counts once, at its centre.
    let mut peaks: Vec<(usize, usize)> = Vec::new();
    let mut i = 1;
    while i + 1 < KDE_GRID {
        let mut j = i;
        while j + 1 < KDE_GRID && density[j + 1] == density[i] {
            j += 1;
        }
        if j + 1 < KDE_GRID && density[i - 1] < density[i] && density[j + 1] < density[i] {
            peaks.push((i, j));
        }
        i = j + 1;
    }
    let global = density.iter().copied().fold(0.0, f64::max);
    let mut mode_locations = Vec::new();
    for &(a, b) in &peaks {
        let top = density[a];
        let mut left_min = top;
        let mut k = a;
        while k > 0 && density[k - 1] <= top {
            k -= 1;
            left_min = left_min.min(density[k]);
        }
        let mut right_min = top;
        let mut k = b;
        while k + 1 < KDE_GRID && density[k + 1] <= top {
            k += 1;
            right_min = right_min.min(density[k]);
        }
        if top - left_min.max(right_min) >= MODE_PROMINENCE * global {
            mode_locations.push(0.5 * (grid[a] + grid[b]));
        }
    }
    if mode_locations.is_empty() {
        // Only possible when equal-height twin peaks shadow each other.
        let at = density.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).map_or(0, |p| p.0);
        mode_locations.push(grid[at]);
    }
    Ok(ModeReport {
        mode_count: mode_locations.len(),
        mode_locations,
        bandwidth: h,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Mean, sample standard deviation and type-7 quantiles.
pub fn density_summary(values: &[f64]) -> Result<DensitySummary> {
    if values.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::Invalid("non-finite value".into()));
    }
    let s = sorted(values);
    let (mean, std) = mean_std(&s);
    Ok(DensitySummary {
        mean,
        std,
        q05: quantile_sorted(&s, 0.05),
        q50: quantile_sorted(&s, 0.50),
        q95: quantile_sorted(&s, 0.95),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetQuantity {
    Mean,
    Sigma,
}

/// Per-dimension summaries of component means or standard deviations.
pub fn summarize_set(pred: &PredictiveSet, quantity: SetQuantity) -> Result<[DensitySummary; COMMAND_DIM]> {
    let mut out = Vec::with_capacity(COMMAND_DIM);
    for d in 0..COMMAND_DIM {
        let values: Vec<f64> = pred
            .components
            .iter()
            .map(|c| match quantity {
                SetQuantity::Mean => c.mean[d],
                SetQuantity::Sigma => c.variance[d].sqrt(),
            })
            .collect();
        out.push(density_summary(&values)?);
    }
    Ok(out.try_into().expect("four dimensions"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-14);
        assert!((normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-15);
    }

    #[test]
    fn degenerate_over_prediction_closed_form() {
        let preds: Vec<Vec<(f64, f64)>> = (0..20).map(|i| vec![(i as f64 + 1.0, 0.0)]).collect();
        let ys: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let r = regression_ece(&preds, &ys, 10, EceAggregation::Squared).unwrap();
        assert!(r.empirical.iter().all(|&e| e == 1.0));
        let expected = r.levels.iter().map(|p| (p - 1.0).powi(2)).sum::<f64>() / 10.0;
        assert_eq!(r.ece, expected);
    }

    #[test]
    fn ece_rejects_bad_input() {
        assert!(regression_ece(&[], &[], 10, EceAggregation::Squared).is_err());
        let p = vec![vec![(0.0, 1.0)]; 5];
        assert!(regression_ece(&p, &[0.0; 5], 10, EceAggregation::Squared).is_err());
        let p = vec![vec![(0.0, -1.0)]; 10];
        assert!(regression_ece(&p, &[0.0; 10], 10, EceAggregation::Squared).is_err());
    }

    #[test]
    fn identical_samples_single_mode() {
        let r = detect_modes(&[2.5; 40], BandwidthRule::Silverman).unwrap();
        assert_eq!(r.mode_count, 1);
        assert!((r.mode_locations[0] - 2.5).abs() < 1e-6);
        assert!(detect_modes(&[1.0; 5], BandwidthRule::Silverman).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = density_summary(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.q50, 2.0);
        let c = density_summary(&[4.0; 7]).unwrap();
        assert_eq!(c.std, 0.0);
        assert!(c.q05 == 4.0 && c.q95 == 4.0);
        assert!(density_summary(&[1.0]).is_err());
    }
}
