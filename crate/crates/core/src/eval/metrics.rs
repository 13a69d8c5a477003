use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forecast horizons reported in evaluation tables, minutes.
pub const HORIZONS_MIN: [u32; 5] = [5, 15, 30, 45, 60];

/// Actual speeds below this (mph) are left out of MAPE.
pub const MAPE_FLOOR_MPH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    pub n: usize,
    /// Entries excluded from MAPE because |actual| < 1 mph.
    pub mape_skipped: usize,
}

pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} actual values but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput("no values to score".into()));
    }
    let n = actual.len() as f64;
    let (mut abs, mut sq, mut pct, mut pct_n) = (0.0, 0.0, 0.0, 0usize);
    for (a, p) in actual.iter().zip(predicted) {
        let e = a - p;
        abs += e.abs();
        sq += e * e;
        if a.abs() >= MAPE_FLOOR_MPH {
            pct += (e / a).abs();
            pct_n += 1;
        }
    }
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: if pct_n == 0 { 0.0 } else { 100.0 * pct / pct_n as f64 },
        n: actual.len(),
        mape_skipped: actual.len() - pct_n,
    })
}

/// Position of a horizon in a 12-step prediction (5 min -> 0, 60 min -> 11).
pub fn horizon_index(horizon_min: u32) -> Result<usize> {
    if horizon_min == 0 || !horizon_min.is_multiple_of(5) || horizon_min > 60 {
        return Err(Error::Config(format!(
            "horizon {horizon_min} min is not a multiple of 5 in 5..=60"
        )));
    }
    Ok(horizon_min as usize / 5 - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon_min: u32,
    pub metrics: Metrics,
}

/// One technique's metrics at every reported horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub technique: String,
    pub rows: Vec<HorizonRow>,
}

impl MetricsReport {
    pub fn at(&self, horizon_min: u32) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.horizon_min == horizon_min)
            .map(|r| &r.metrics)
    }
}

/// Scores row-aligned 12-step predictions against the actual future speeds.
pub fn evaluate_horizons(technique: &str, actual: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<MetricsReport> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} actual rows but {} prediction rows",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput("empty test split".into()));
    }
    let rows = HORIZONS_MIN
        .iter()
        .map(|&h| {
            let i = horizon_index(h)?;
            let a: Vec<f64> = actual.iter().map(|r| column(r, i)).collect::<Result<_>>()?;
            let p: Vec<f64> = predicted.iter().map(|r| column(r, i)).collect::<Result<_>>()?;
            Ok(HorizonRow {
                horizon_min: h,
                metrics: compute_metrics(&a, &p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        technique: technique.to_string(),
        rows,
    })
}

fn column(row: &[f64], i: usize) -> Result<f64> {
    row.get(i)
        .copied()
        .ok_or_else(|| Error::Dimension(format!("prediction row of length {} has no step {}", row.len(), i + 1)))
}

/// MAE at one horizon for each group key (e.g. target sensor), sorted by key.
pub fn grouped_mae(
    keys: &[String],
    actual: &[Vec<f64>],
    predicted: &[Vec<f64>],
    horizon_min: u32,
) -> Result<Vec<(String, f64)>> {
    let i = horizon_index(horizon_min)?;
    if keys.len() != actual.len() || keys.len() != predicted.len() {
        return Err(Error::Dimension(
            "keys, actual and predicted rows differ in length".into(),
        ));
    }
    let mut acc: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
    for ((k, a), p) in keys.iter().zip(actual).zip(predicted) {
        let e = acc.entry(k).or_default();
        e.0 += (column(a, i)? - column(p, i)?).abs();
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (s, n))| (k.to_string(), s / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = compute_metrics(&[50.0, 60.0], &[55.0, 54.0]).unwrap();
        assert!((m.mae - 5.5).abs() < 1e-12);
        assert!((m.rmse - 30.5f64.sqrt()).abs() < 1e-12);
        assert!((m.mape - 10.0).abs() < 1e-12);
    }

    #[test]
    fn mape_skips_near_zero() {
        let m = compute_metrics(&[0.5, 10.0], &[1.5, 12.0]).unwrap();
        assert_eq!(m.mape_skipped, 1);
        assert!((m.mape - 20.0).abs() < 1e-12);
        assert!(matches!(compute_metrics(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn horizon_map() {
        assert_eq!(horizon_index(5).unwrap(), 0);
        assert_eq!(horizon_index(60).unwrap(), 11);
        assert!(horizon_index(7).is_err());
        assert!(horizon_index(65).is_err());
    }
}
