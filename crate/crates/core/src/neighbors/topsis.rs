use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Criterion weights and directions for a TOPSIS ranking.
///
/// `signs[j]` is `+1` for a criterion to maximize and `-1` for one to
/// minimize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopsisSpec {
    pub weights: Vec<f64>,
    pub signs: Vec<i8>,
}

impl Default for TopsisSpec {
    /// Correlation (max), distance (min), mean difference (min), equal weights.
    fn default() -> Self {
        Self {
            weights: vec![1.0; 3],
            signs: vec![1, -1, -1],
        }
    }
}

impl TopsisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.signs.len() {
            return dim_err(format!("{} weights but {} signs", self.weights.len(), self.signs.len()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("TOPSIS weights must be positive".into()));
        }
        if self.signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::Config("TOPSIS signs must be +1 or -1".into()));
        }
        Ok(())
    }
}

/// Closeness of each alternative (row of `attributes`) to the ideal solution.
///
/// Columns are vector-normalized (an all-zero column stays zero) and scaled
/// by the weights normalized to sum 1. Closeness is `d- / (d+ + d-)`, taken
/// as 0.5 when both distances vanish.
pub fn topsis_closeness(attributes: &[Vec<f64>], spec: &TopsisSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let c = spec.weights.len();
    if attributes.is_empty() {
        return Err(Error::EmptyInput("TOPSIS needs at least one alternative".into()));
    }
    if let Some(row) = attributes.iter().find(|r| r.len() != c) {
        return dim_err(format!("attribute row has {} criteria, spec has {c}", row.len()));
    }
    if attributes.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("TOPSIS attributes".into()));
    }
    let wsum: f64 = spec.weights.iter().sum();
    let mut weighted = attributes.to_vec();
    for j in 0..c {
        let norm = attributes.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
        let w = spec.weights[j] / wsum;
        for row in &mut weighted {
            row[j] = if norm > 0.0 { row[j] / norm * w } else { 0.0 };
        }
    }
    let mut best = vec![0.0; c];
    let mut worst = vec![0.0; c];
    for j in 0..c {
        let col = weighted.iter().map(|r| r[j]);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (best[j], worst[j]) = if spec.signs[j] > 0 { (hi, lo) } else { (lo, hi) };
    }
    let dist = |row: &[f64], ideal: &[f64]| row.iter().zip(ideal).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(weighted
        .iter()
        .map(|row| {
            let (dp, dm) = (dist(row, &best), dist(row, &worst));
            if dp + dm == 0.0 {
                0.5
            } else {
                dm / (dp + dm)
            }
        })
        .collect())
}

/// Ranks alternatives by descending closeness, breaking ties by ascending
/// id. Returns `(row index, closeness)` pairs.
pub fn topsis_rank(ids: &[String], attributes: &[Vec<f64>], spec: &TopsisSpec) -> Result<Vec<(usize, f64)>> {
    if ids.len() != attributes.len() {
        return dim_err(format!("{} ids for {} alternatives", ids.len(), attributes.len()));
    }
    let scores = topsis_closeness(attributes, spec)?;
    let mut order: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn single_alternative_is_neutral() {
        let r = topsis_rank(&ids(1), &[vec![0.3, 2.0, 1.0]], &TopsisSpec::default()).unwrap();
        assert_eq!(r, vec![(0, 0.5)]);
    }

    #[test]
    fn two_benefit_criteria() {
        let spec = TopsisSpec {
            weights: vec![1.0, 1.0],
            signs: vec![1, 1],
        };
        let r = topsis_rank(&ids(2), &[vec![1.0, 1.0], vec![2.0, 2.0]], &spec).unwrap();
        assert_eq!(r[0], (1, 1.0));
        assert_eq!(r[1], (0, 0.0));
    }

    #[test]
    fn ties_break_by_id() {
        let names = vec!["b".to_string(), "a".to_string()];
        let r = topsis_rank(
            &names,
            &[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]],
            &TopsisSpec::default(),
        )
        .unwrap();
        assert_eq!(r[0].0, 1);
    }

    #[test]
    fn width_mismatch() {
        let r = topsis_closeness(&[vec![1.0, 2.0]], &TopsisSpec::default());
        assert!(matches!(r, Err(Error::Dimension(_))));
        let bad = TopsisSpec {
            weights: vec![1.0],
            signs: vec![0],
        };
        assert!(bad.validate().is_err());
    }
}
