use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Kruskal-Wallis H test over pooled mid-ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwtResult {
    pub h: f64,
    pub df: usize,
    pub p_value: f64,
    pub rank_sums: Vec<f64>,
    pub sizes: Vec<usize>,
    pub n_total: usize,
    /// Σ (t³ - t) over tie groups.
    pub tie_sum: f64,
}

impl KwtResult {
    pub fn mean_ranks(&self) -> Vec<f64> {
        self.rank_sums
            .iter()
            .zip(&self.sizes)
            .map(|(r, n)| r / *n as f64)
            .collect()
    }
}

/// Mid-ranks (1-based) of `values`, plus Σ (t³ - t) over tie groups.
pub fn mid_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    (ranks, tie_sum)
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KwtResult> {
    if groups.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "Kruskal-Wallis needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(Error::EmptyInput(format!("group {i} is empty")));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Kruskal-Wallis input".into()));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let (ranks, tie_sum) = mid_ranks(&pooled);
    let mut rank_sums = Vec::with_capacity(groups.len());
    let mut start = 0;
    for g in groups {
        rank_sums.push(ranks[start..start + g.len()].iter().sum::<f64>());
        start += g.len();
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let n = pooled.len() as f64;
    let df = groups.len() - 1;
    let correction = 1.0 - tie_sum / (n * n * n - n);
    let h = if correction <= 0.0 {
        0.0
    } else {
        let s: f64 = rank_sums.iter().zip(&sizes).map(|(r, k)| r * r / *k as f64).sum();
        ((12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction).max(0.0)
    };
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Config(e.to_string()))?;
    Ok(KwtResult {
        h,
        df,
        p_value: chi.sf(h).clamp(0.0, 1.0),
        rank_sums,
        sizes,
        n_total: pooled.len(),
        tie_sum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub i: usize,
    pub j: usize,
    /// Mean rank of group i minus mean rank of group j.
    pub difference: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_adjusted: f64,
}

impl PairComparison {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_adjusted < alpha
    }
}

/// Dunn's pairwise test with Bonferroni adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctResult {
    pub alpha: f64,
    pub critical_z: f64,
    pub pairs: Vec<PairComparison>,
}

pub fn multiple_comparison(kwt: &KwtResult, alpha: f64) -> Result<MctResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = kwt.sizes.len();
    let m = (k * (k - 1) / 2).max(1) as f64;
    let normal = Normal::standard();
    let critical_z = normal.inverse_cdf(1.0 - alpha / (2.0 * m));
    let n = kwt.n_total as f64;
    let variance = n * (n + 1.0) / 12.0 - kwt.tie_sum / (12.0 * (n - 1.0));
    let mean = kwt.mean_ranks();
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let diff = mean[i] - mean[j];
            let se = (variance.max(0.0) * (1.0 / kwt.sizes[i] as f64 + 1.0 / kwt.sizes[j] as f64)).sqrt();
            let p = if se > 0.0 {
                2.0 * normal.sf((diff / se).abs())
            } else {
                1.0
            };
            pairs.push(PairComparison {
                i,
                j,
                difference: diff,
                lower: diff - critical_z * se,
                upper: diff + critical_z * se,
                p_adjusted: (p * m).min(1.0),
            });
        }
    }
    Ok(MctResult {
        alpha,
        critical_z,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_ranks_average_ties() {
        let (r, t) = mid_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, 6.0);
    }

    #[test]
    fn rejects_bad_groups() {
        assert!(kruskal_wallis(&[vec![1.0]]).is_err());
        assert!(kruskal_wallis(&[vec![1.0], vec![]]).is_err());
    }
}
