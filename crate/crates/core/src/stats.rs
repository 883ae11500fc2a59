//! Small hypothesis tests used by the experiment reports.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: u64,
    /// Pairs with a non-zero difference.
    pub informative: u64,
    pub p_value: f64,
}

/// One-sided exact sign test that differences tend to be positive. Zero
/// differences are dropped.
pub fn sign_test_greater(differences: &[f64]) -> SignTest {
    let positive = differences.iter().filter(|&&d| d > 0.0).count() as u64;
    let informative = differences.iter().filter(|&&d| d != 0.0).count() as u64;
    let p_value = if positive == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, informative).expect("valid binomial");
        b.sf(positive - 1)
    };
    SignTest {
        positive,
        informative,
        p_value,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

/// One-sided Mann-Whitney test that `x` is stochastically larger than `y`,
/// normal approximation with tie and continuity corrections.
pub fn mann_whitney_greater(x: &[f64], y: &[f64]) -> RankTest {
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    if x.is_empty() || y.is_empty() {
        return RankTest { u: 0.0, z: 0.0, p_value: 1.0 };
    }
    let mut pooled: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_x += mid_rank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    if var <= 0.0 {
        return RankTest { u, z: 0.0, p_value: 1.0 };
    }
    let z = (u - n1 * n2 / 2.0 - 0.5) / var.sqrt();
    let p_value = Normal::standard().sf(z);
    RankTest { u, z, p_value }
}
