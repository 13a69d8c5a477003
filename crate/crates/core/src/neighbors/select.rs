use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::topsis::{topsis_rank, TopsisSpec};
use crate::data::{is_missing, SensorNetwork, SpeedMatrix, SLOTS_PER_DAY, STEP_MINUTES};
use crate::error::{dim_err, Error, Result};

/// Sample Pearson correlation. A constant series yields 0.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return dim_err(format!(
            "correlation needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `|mean(a) - mean(b)|`.
pub fn abs_mean_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return dim_err(format!(
            "mean difference needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    let n = a.len() as f64;
    Ok((a.iter().sum::<f64>() / n - b.iter().sum::<f64>() / n).abs())
}

/// Run-wide neighbor selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborConfig {
    /// Candidate radius in km (strict `<`).
    pub distance_km: f64,
    /// History window in minutes.
    pub history_min: u32,
    /// Neighbors kept per query, target included.
    pub count: usize,
    /// Rankings are reused for all anchors of the same target inside one
    /// interval of this many minutes. 5 recomputes at every anchor.
    pub cache_interval_min: u32,
    pub topsis: TopsisSpec,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self {
            distance_km: 10.0,
            history_min: 300,
            count: 10,
            cache_interval_min: STEP_MINUTES,
            topsis: TopsisSpec::default(),
        }
    }
}

impl NeighborConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_km.is_finite() && self.distance_km > 0.0) {
            return Err(Error::Config(format!(
                "distance threshold {} must be > 0",
                self.distance_km
            )));
        }
        for (name, v) in [
            ("history_min", self.history_min),
            ("cache_interval_min", self.cache_interval_min),
        ] {
            if v == 0 || v % STEP_MINUTES != 0 {
                return Err(Error::Config(format!(
                    "{name} {v} must be a positive multiple of {STEP_MINUTES}"
                )));
            }
        }
        if self.count == 0 {
            return Err(Error::Config("neighbor count must be >= 1".into()));
        }
        if self.topsis.weights.len() != 3 {
            return Err(Error::Config("neighbor TOPSIS uses exactly 3 criteria".into()));
        }
        self.topsis.validate()
    }

    pub fn history_steps(&self) -> usize {
        (self.history_min / STEP_MINUTES) as usize
    }

    /// Anchor whose ranking stands in for `anchor` under the cache interval:
    /// the start of its interval (intervals are aligned to the start of the
    /// day window), moved forward to the first slot with full history.
    pub fn representative_anchor(&self, matrix: &SpeedMatrix, anchor: NaiveDateTime) -> Option<NaiveDateTime> {
        let t = matrix.index_of(anchor)?;
        let (day, slot) = (t / SLOTS_PER_DAY, t % SLOTS_PER_DAY);
        let k = (self.cache_interval_min / STEP_MINUTES).max(1) as usize;
        let rep = (slot / k * k).max(self.history_steps()).min(slot);
        Some(matrix.time_at(SpeedMatrix::index(day, rep)))
    }
}

/// One query of the selection algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborQuery {
    pub target: String,
    pub anchor: NaiveDateTime,
    pub distance_km: f64,
    pub history_min: u32,
    pub count: usize,
}

impl NeighborQuery {
    pub fn new(target: impl Into<String>, anchor: NaiveDateTime, config: &NeighborConfig) -> Self {
        Self {
            target: target.into(),
            anchor,
            distance_km: config.distance_km,
            history_min: config.history_min,
            count: config.count,
        }
    }
}

/// A ranked candidate with its attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSensor {
    pub sensor_id: String,
    pub closeness: f64,
    pub corr: f64,
    pub km: f64,
    pub mean_diff: f64,
}

/// Full ranking of the candidates of one query; the first `selected`
/// entries form the chosen neighbor set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSensors {
    pub target: String,
    pub anchor: NaiveDateTime,
    pub ranking: Vec<RankedSensor>,
    pub selected: usize,
    /// Fewer candidates than requested neighbors.
    pub shortfall: bool,
}

impl RankedSensors {
    pub fn selected(&self) -> &[RankedSensor] {
        &self.ranking[..self.selected]
    }

    pub fn selected_ids(&self) -> Vec<String> {
        self.selected().iter().map(|r| r.sensor_id.clone()).collect()
    }
}

/// Speed series of sensor `s` over the closed window `[t0 - steps, t0]`.
fn window(matrix: &SpeedMatrix, s: usize, t0: usize, steps: usize) -> Vec<f64> {
    (t0 - steps..=t0).map(|t| matrix.get(t, s)).collect()
}

/// Ranks the sensors within `distance_km` of the target (target included)
/// by TOPSIS over correlation, distance and mean speed difference computed on
/// the history window `[t0 - history, t0]`.
///
/// Candidates must appear in both the network and the matrix.
pub fn select_neighbors(
    matrix: &SpeedMatrix,
    network: &SensorNetwork,
    query: &NeighborQuery,
    topsis: &TopsisSpec,
) -> Result<RankedSensors> {
    if query.history_min == 0 || !query.history_min.is_multiple_of(STEP_MINUTES) || query.count == 0 {
        return Err(Error::Config(
            "history must be a positive multiple of 5 min and count >= 1".into(),
        ));
    }
    let p_net = network
        .index_of(&query.target)
        .ok_or_else(|| Error::NotFound(format!("target sensor {} not in network", query.target)))?;
    let p_mat = matrix
        .sensor_index(&query.target)
        .ok_or_else(|| Error::NotFound(format!("target sensor {} not in speed matrix", query.target)))?;
    let steps = (query.history_min / STEP_MINUTES) as usize;
    let t0 = matrix
        .index_of(query.anchor)
        .ok_or_else(|| Error::InsufficientHistory(format!("anchor {} outside the speed matrix grid", query.anchor)))?;
    if t0 % SLOTS_PER_DAY < steps {
        return Err(Error::InsufficientHistory(format!(
            "window {} .. {} leaves the day window",
            query.anchor - Duration::minutes(query.history_min as i64),
            query.anchor
        )));
    }

    let target_series = window(matrix, p_mat, t0, steps);
    let mut ids = Vec::new();
    let mut attrs = Vec::new();
    for (q_net, info) in network.sensors().iter().enumerate() {
        let km = network.distance(p_net, q_net);
        if !(km < query.distance_km || q_net == p_net) {
            continue;
        }
        let Some(q_mat) = matrix.sensor_index(&info.id) else {
            continue;
        };
        let series = window(matrix, q_mat, t0, steps);
        if series.iter().chain(&target_series).any(|v| is_missing(*v)) {
            return Err(Error::InsufficientHistory(format!(
                "missing speeds for {} or {} before {}",
                info.id, query.target, query.anchor
            )));
        }
        ids.push(info.id.clone());
        attrs.push(vec![
            pearson_corr(&target_series, &series)?,
            km,
            abs_mean_diff(&target_series, &series)?,
        ]);
    }
    let order = topsis_rank(&ids, &attrs, topsis)?;
    let ranking: Vec<RankedSensor> = order
        .into_iter()
        .map(|(i, closeness)| RankedSensor {
            sensor_id: ids[i].clone(),
            closeness,
            corr: attrs[i][0],
            km: attrs[i][1],
            mean_diff: attrs[i][2],
        })
        .collect();
    let selected = query.count.min(ranking.len());
    Ok(RankedSensors {
        target: query.target.clone(),
        anchor: query.anchor,
        shortfall: ranking.len() < query.count,
        ranking,
        selected,
    })
}

/// CSV with one row per ranked candidate:
/// `target,rank,sensor_id,closeness,corr,km,mean_diff` (rank starts at 1).
pub fn rankings_csv(rankings: &[RankedSensors]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["target", "rank", "sensor_id", "closeness", "corr", "km", "mean_diff"])?;
    for r in rankings {
        for (rank, s) in r.ranking.iter().enumerate() {
            w.write_record([
                r.target.clone(),
                (rank + 1).to_string(),
                s.sensor_id.clone(),
                format!("{:.6}", s.closeness),
                format!("{:.6}", s.corr),
                format!("{:.6}", s.km),
                format!("{:.6}", s.mean_diff),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
