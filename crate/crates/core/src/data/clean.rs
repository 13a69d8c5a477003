//! Missing-value and point-outlier cleaning.
//!
//! Interpolation and outlier windows never cross a day boundary: each day
//! window (07:00-22:00) is treated as an independent series.

use serde::{Deserialize, Serialize};

use super::matrix::{is_missing, SpeedMatrix, SLOTS_PER_DAY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Sensors missing more than this fraction of cells are dropped.
    pub max_missing_fraction: f64,
    /// Inclusive valid speed range in mph.
    pub valid_speed_range: (f64, f64),
    /// Centered window size (odd, >= 3) for outlier replacement.
    pub outlier_window: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            max_missing_fraction: 0.10,
            valid_speed_range: (0.0, 120.0),
            outlier_window: 5,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.valid_speed_range;
        if !(self.max_missing_fraction > 0.0 && self.max_missing_fraction < 1.0) {
            return Err(Error::Config(format!(
                "max_missing_fraction {} outside (0,1)",
                self.max_missing_fraction
            )));
        }
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config(format!("valid speed range [{lo}, {hi}] is empty")));
        }
        if self.outlier_window < 3 || self.outlier_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "outlier_window {} must be odd and >= 3",
                self.outlier_window
            )));
        }
        Ok(())
    }

    fn in_range(&self, v: f64) -> bool {
        v >= self.valid_speed_range.0 && v <= self.valid_speed_range.1
    }
}

/// A sensor removed for exceeding the missing-data threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSensor {
    pub sensor_id: String,
    pub missing_fraction: f64,
}

/// Drops sensors with too many gaps and fills the rest.
///
/// Gaps inside a day are linearly interpolated between the nearest in-range
/// readings; leading and trailing gaps take the nearest in-range value. A day
/// with no in-range value at all takes the sensor's overall in-range mean.
pub fn clean_missing(matrix: &SpeedMatrix, config: &CleaningConfig) -> Result<(SpeedMatrix, Vec<DroppedSensor>)> {
    config.validate()?;
    let tau = matrix.len_times();
    if tau == 0 || matrix.n_sensors() == 0 {
        return Ok((matrix.clone(), Vec::new()));
    }
    let mut kept = Vec::new();
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for (s, id) in matrix.sensors().iter().enumerate() {
        let mut col = matrix.column(s);
        let missing = col.iter().filter(|v| is_missing(**v)).count();
        let fraction = missing as f64 / tau as f64;
        if fraction > config.max_missing_fraction {
            dropped.push(DroppedSensor {
                sensor_id: id.clone(),
                missing_fraction: fraction,
            });
            continue;
        }
        if missing > 0 {
            let valid: Vec<f64> = col.iter().copied().filter(|v| config.in_range(*v)).collect();
            let overall = if valid.is_empty() {
                (config.valid_speed_range.0 + config.valid_speed_range.1) / 2.0
            } else {
                valid.iter().sum::<f64>() / valid.len() as f64
            };
            for day in col.chunks_mut(SLOTS_PER_DAY) {
                fill_series(day, overall, |v| config.in_range(v));
            }
        }
        kept.push(id.clone());
        columns.push(col);
    }
    let out = SpeedMatrix::from_columns(matrix.start_date(), matrix.days(), kept, &columns)?;
    Ok((out, dropped))
}

/// Fills missing entries of one series in place, interpolating between the
/// nearest in-range readings. Out-of-range readings are left for
/// [`clean_outliers`] and never serve as interpolation anchors.
fn fill_series(series: &mut [f64], fallback: f64, anchor: impl Fn(f64) -> bool) {
    let anchors: Vec<usize> = (0..series.len()).filter(|&i| anchor(series[i])).collect();
    if anchors.is_empty() {
        for v in series.iter_mut().filter(|v| is_missing(**v)) {
            *v = fallback;
        }
        return;
    }
    let mut next = 0;
    for i in 0..series.len() {
        while next < anchors.len() && anchors[next] < i {
            next += 1;
        }
        if !is_missing(series[i]) {
            continue;
        }
        let before = next.checked_sub(1).map(|k| anchors[k]);
        let after = anchors.get(next).copied();
        series[i] = match (before, after) {
            (Some(a), Some(b)) => {
                let w = (i - a) as f64 / (b - a) as f64;
                series[a] + w * (series[b] - series[a])
            }
            (Some(a), None) => series[a],
            (None, Some(b)) => series[b],
            (None, None) => fallback,
        };
    }
}

/// Replaces out-of-range speeds by the mean of the in-range values inside the
/// centered window (excluding the outlier itself). Falls back to the day's
/// in-range mean, then the sensor's in-range mean.
pub fn clean_outliers(matrix: &SpeedMatrix, config: &CleaningConfig) -> Result<SpeedMatrix> {
    config.validate()?;
    if matrix.values().iter().any(|v| is_missing(*v)) {
        return Err(Error::State(
            "clean_outliers needs a matrix without missing values".into(),
        ));
    }
    let half = config.outlier_window / 2;
    let mut columns = Vec::with_capacity(matrix.n_sensors());
    for s in 0..matrix.n_sensors() {
        let original = matrix.column(s);
        let mut col = original.clone();
        let in_range: Vec<f64> = original.iter().copied().filter(|v| config.in_range(*v)).collect();
        let sensor_mean = (!in_range.is_empty()).then(|| in_range.iter().sum::<f64>() / in_range.len() as f64);
        for (day, (src, dst)) in original
            .chunks(SLOTS_PER_DAY)
            .zip(col.chunks_mut(SLOTS_PER_DAY))
            .enumerate()
        {
            let day_valid: Vec<f64> = src.iter().copied().filter(|v| config.in_range(*v)).collect();
            let day_mean = (!day_valid.is_empty()).then(|| day_valid.iter().sum::<f64>() / day_valid.len() as f64);
            for i in 0..src.len() {
                if config.in_range(src[i]) {
                    continue;
                }
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(src.len() - 1);
                let neighbors: Vec<f64> = (lo..=hi)
                    .filter(|&j| j != i && config.in_range(src[j]))
                    .map(|j| src[j])
                    .collect();
                dst[i] = if !neighbors.is_empty() {
                    neighbors.iter().sum::<f64>() / neighbors.len() as f64
                } else if let Some(m) = day_mean.or(sensor_mean) {
                    m
                } else {
                    log::warn!("sensor {} day {day}: no in-range values, clamping", matrix.sensors()[s]);
                    src[i].clamp(config.valid_speed_range.0, config.valid_speed_range.1)
                };
            }
        }
        columns.push(col);
    }
    SpeedMatrix::from_columns(matrix.start_date(), matrix.days(), matrix.sensors().to_vec(), &columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::matrix::MISSING;
    use chrono::NaiveDate;

    fn one_day(series: &[f64]) -> SpeedMatrix {
        let mut col = vec![60.0; SLOTS_PER_DAY];
        col[..series.len()].copy_from_slice(series);
        SpeedMatrix::from_columns(
            NaiveDate::from_ymd_opt(2017, 6, 1).unwrap(),
            1,
            vec!["A".into()],
            &[col],
        )
        .unwrap()
    }

    #[test]
    fn midpoint_interpolation() {
        let m = one_day(&[60.0, MISSING, 70.0]);
        let (c, dropped) = clean_missing(&m, &CleaningConfig::default()).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(&c.column(0)[..3], &[60.0, 65.0, 70.0]);
    }

    #[test]
    fn outliers_are_not_interpolation_anchors() {
        let m = one_day(&[60.0, MISSING, 200.0, MISSING, 64.0]);
        let (c, _) = clean_missing(&m, &CleaningConfig::default()).unwrap();
        assert_eq!(&c.column(0)[..5], &[60.0, 61.0, 200.0, 63.0, 64.0]);
        let o = clean_outliers(&c, &CleaningConfig::default()).unwrap();
        assert_eq!(&o.column(0)[..5], &[60.0, 61.0, 62.0, 63.0, 64.0]);
    }

    #[test]
    fn leading_gap_takes_nearest_edge() {
        let m = one_day(&[MISSING, 50.0, 52.0]);
        let (c, _) = clean_missing(&m, &CleaningConfig::default()).unwrap();
        assert_eq!(&c.column(0)[..3], &[50.0, 50.0, 52.0]);
    }

    #[test]
    fn sparse_sensor_dropped() {
        let start = NaiveDate::from_ymd_opt(2017, 6, 1).unwrap();
        let good = vec![60.0; SLOTS_PER_DAY];
        let bad: Vec<f64> = (0..SLOTS_PER_DAY)
            .map(|i| if i % 10 < 3 { MISSING } else { 55.0 })
            .collect();
        let m = SpeedMatrix::from_columns(start, 1, vec!["A".into(), "B".into()], &[good, bad]).unwrap();
        let (c, dropped) = clean_missing(&m, &CleaningConfig::default()).unwrap();
        assert_eq!(c.sensors(), ["A"]);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].sensor_id, "B");
        assert!((dropped[0].missing_fraction - 0.3).abs() < 0.01);
    }

    #[test]
    fn window_average_replaces_outlier() {
        let m = one_day(&[60.0, 62.0, 200.0, 58.0, 61.0]);
        let c = clean_outliers(&m, &CleaningConfig::default()).unwrap();
        assert_eq!(c.get(2, 0), 60.25);
        assert_eq!(c.get(1, 0), 62.0);
    }

    #[test]
    fn negative_speed_replaced() {
        let m = one_day(&[60.0, 62.0, -5.0, 58.0, 61.0]);
        let c = clean_outliers(&m, &CleaningConfig::default()).unwrap();
        assert_eq!(c.get(2, 0), 60.25);
    }

    #[test]
    fn in_range_matrix_unchanged() {
        let m = one_day(&[60.0, 62.0, 64.0]);
        assert_eq!(clean_outliers(&m, &CleaningConfig::default()).unwrap(), m);
    }

    #[test]
    fn falls_back_to_day_mean() {
        let mut series = vec![200.0; 5];
        series.push(30.0);
        let m = one_day(&series);
        let c = clean_outliers(&m, &CleaningConfig::default()).unwrap();
        // slot 2's window (0..=4) holds only outliers
        let day_mean = (30.0 + 60.0 * (SLOTS_PER_DAY - 6) as f64) / (SLOTS_PER_DAY - 5) as f64;
        assert!((c.get(2, 0) - day_mean).abs() < 1e-12);
        // slot 4's window (2..=6) holds slots 5 and 6
        assert_eq!(c.get(4, 0), 45.0);
    }

    #[test]
    fn outliers_needs_complete_matrix() {
        let m = one_day(&[MISSING]);
        assert!(clean_outliers(&m, &CleaningConfig::default()).is_err());
    }

    #[test]
    fn empty_matrix_passes_through() {
        let m = SpeedMatrix::empty_grid(NaiveDate::from_ymd_opt(2017, 6, 1).unwrap(), 1, vec![]);
        let (c, d) = clean_missing(&m, &CleaningConfig::default()).unwrap();
        assert_eq!(c.n_sensors(), 0);
        assert!(d.is_empty());
    }

    #[test]
    fn config_validation() {
        let c = CleaningConfig {
            outlier_window: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = CleaningConfig {
            valid_speed_range: (10.0, 10.0),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
