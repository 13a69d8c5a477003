use std::collections::HashMap;

use chrono::{Duration, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normalize::NormalizationParams;
use crate::data::{is_missing, SensorNetwork, SpeedMatrix, SLOTS_PER_DAY, STEP_MINUTES};
use crate::error::{Error, Result};
use crate::neighbors::{select_neighbors, NeighborConfig, NeighborQuery, RankedSensors};
use crate::nn::Tensor;

/// Prediction steps per sample (one hour at 5 minutes).
pub const HORIZON: usize = 12;
/// Day offsets of the four input channels: today, yesterday, one and two weeks back.
pub const DAY_OFFSETS: [usize; 4] = [0, 1, 7, 14];
pub const CHANNELS: usize = DAY_OFFSETS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub neighbors: NeighborConfig,
    /// Fraction of anchor times (chronologically first) used for training.
    pub split_fraction: f64,
    /// Spacing between consecutive anchors of one day, minutes.
    pub anchor_stride_min: u32,
    /// Target sensors; empty means every sensor present in both the matrix
    /// and the network.
    pub targets: Vec<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            neighbors: NeighborConfig::default(),
            split_fraction: 0.70,
            anchor_stride_min: STEP_MINUTES,
            targets: Vec::new(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.neighbors.validate()?;
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "split fraction {} outside (0,1]",
                self.split_fraction
            )));
        }
        if self.anchor_stride_min == 0 || !self.anchor_stride_min.is_multiple_of(STEP_MINUTES) {
            return Err(Error::Config(format!(
                "anchor stride {} must be a positive multiple of {STEP_MINUTES}",
                self.anchor_stride_min
            )));
        }
        if !self.neighbors.history_steps().is_multiple_of(2) {
            return Err(Error::Config("history window must span an even number of steps".into()));
        }
        Ok(())
    }

    /// Input tensor shape `[steps, neighbors, channels]`.
    pub fn x_shape(&self) -> [usize; 3] {
        [self.neighbors.history_steps(), self.neighbors.count, CHANNELS]
    }

    /// Slots of the day window at which a sample can be anchored: the
    /// history window, the target horizon and the centered windows of the
    /// earlier days all stay inside 07:00-22:00.
    pub fn anchor_slots(&self) -> Vec<usize> {
        let steps = self.neighbors.history_steps();
        let ahead = HORIZON.max(steps / 2);
        if steps + ahead >= SLOTS_PER_DAY {
            return Vec::new();
        }
        let stride = (self.anchor_stride_min / STEP_MINUTES) as usize;
        (steps..=SLOTS_PER_DAY - 1 - ahead).step_by(stride.max(1)).collect()
    }
}

/// One sample in mph before normalization. `x` is laid out
/// `[step][neighbor][channel]` with dimensions `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub shape: [usize; 3],
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub target: String,
    pub anchor: NaiveDateTime,
    /// Selected neighbors in rank order (before any padding).
    pub neighbors: Vec<String>,
    /// The neighbor set fell short and the last column was repeated.
    pub padded: bool,
}

/// A normalized sample: `x` has shape `[steps, neighbors, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub y: Vec<f64>,
    pub target: String,
    pub anchor: NaiveDateTime,
    pub neighbors: Vec<String>,
    pub padded: bool,
}

impl RawSample {
    pub fn normalize(self, params: &NormalizationParams) -> Sample {
        let x = self.x.iter().map(|v| params.normalize_clamped(*v)).collect();
        Sample {
            x: Tensor::new(self.shape.to_vec(), x).expect("sample layout matches shape"),
            y: self.y.iter().map(|v| params.normalize_clamped(*v)).collect(),
            target: self.target,
            anchor: self.anchor,
            neighbors: self.neighbors,
            padded: self.padded,
        }
    }

    /// Every speed the sample holds, inputs then targets.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.x.iter().chain(&self.y).copied()
    }
}

impl Sample {
    /// Targets converted back to mph.
    pub fn y_mph(&self, params: &NormalizationParams) -> Vec<f64> {
        self.y.iter().map(|v| params.denormalize(*v)).collect()
    }
}

/// Batches sample inputs into `[N, steps, neighbors, channels]`.
pub fn stack_x(samples: &[Sample]) -> Result<Tensor> {
    let xs: Vec<Tensor> = samples.iter().map(|s| s.x.clone()).collect();
    Tensor::stack(&xs)
}

/// Batches sample targets into `[N, 12]`.
pub fn stack_y(samples: &[Sample]) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to stack".into()));
    }
    let data: Vec<f64> = samples.iter().flat_map(|s| s.y.iter().copied()).collect();
    Tensor::new(vec![samples.len(), HORIZON], data)
}

/// Builds the 4-channel input and 12-step target for `target` at `anchor`
/// from an already computed neighbor ranking.
///
/// Channel 0 holds day d over `(t0 - Δt, t0]`; channels 1-3 hold days d-1,
/// d-7 and d-14 over `(t0 - Δt/2, t0 + Δt/2]`. Columns follow the ranking; a
/// short ranking is padded by repeating its last sensor.
pub fn build_raw_sample(
    matrix: &SpeedMatrix,
    ranking: &RankedSensors,
    target: &str,
    anchor: NaiveDateTime,
    config: &DatasetConfig,
) -> Result<RawSample> {
    let steps = config.neighbors.history_steps();
    let width = config.neighbors.count;
    let t0 = matrix
        .index_of(anchor)
        .ok_or_else(|| Error::InsufficientHistory(format!("anchor {anchor} outside the speed matrix")))?;
    let (day, slot) = (t0 / SLOTS_PER_DAY, t0 % SLOTS_PER_DAY);
    if slot + 1 < steps || slot + steps / 2 >= SLOTS_PER_DAY || slot + HORIZON >= SLOTS_PER_DAY {
        return Err(Error::InsufficientHistory(format!(
            "anchor {anchor} windows leave the day"
        )));
    }
    if day < DAY_OFFSETS[CHANNELS - 1] {
        let missing = anchor.date() - Duration::days(DAY_OFFSETS[CHANNELS - 1] as i64);
        return Err(Error::InsufficientHistory(format!(
            "day {missing} is not in the speed matrix"
        )));
    }
    let p = matrix
        .sensor_index(target)
        .ok_or_else(|| Error::NotFound(format!("target sensor {target} not in speed matrix")))?;

    let mut neighbors = ranking.selected_ids();
    if neighbors.is_empty() {
        return Err(Error::State(format!("empty neighbor ranking for {target}")));
    }
    let padded = neighbors.len() < width;
    neighbors.truncate(width);
    let mut cols = neighbors
        .iter()
        .map(|id| {
            matrix
                .sensor_index(id)
                .ok_or_else(|| Error::NotFound(format!("neighbor {id} not in speed matrix")))
        })
        .collect::<Result<Vec<_>>>()?;
    if padded {
        log::debug!("{target} at {anchor}: {} neighbors, padding to {width}", cols.len());
        let last = *cols.last().expect("non-empty");
        cols.resize(width, last);
    }

    let first_rows: Vec<usize> = DAY_OFFSETS
        .iter()
        .enumerate()
        .map(|(c, &back)| {
            let base = SpeedMatrix::index(day - back, slot);
            if c == 0 {
                base + 1 - steps
            } else {
                base + 1 - steps / 2
            }
        })
        .collect();
    let mut x = vec![0.0; steps * width * CHANNELS];
    for i in 0..steps {
        for (j, &s) in cols.iter().enumerate() {
            for (c, &row) in first_rows.iter().enumerate() {
                x[(i * width + j) * CHANNELS + c] = matrix.get(row + i, s);
            }
        }
    }
    let y: Vec<f64> = (1..=HORIZON).map(|k| matrix.get(t0 + k, p)).collect();
    if x.iter().chain(&y).any(|v| is_missing(*v)) {
        return Err(Error::InsufficientHistory(format!(
            "missing speeds in the windows of {target} at {anchor}"
        )));
    }
    Ok(RawSample {
        shape: config.x_shape(),
        x,
        y,
        target: target.to_string(),
        anchor,
        neighbors: ranking.selected_ids(),
        padded,
    })
}

/// Selects neighbors for `target` at `anchor` and builds the normalized sample.
pub fn build_sample(
    matrix: &SpeedMatrix,
    network: &SensorNetwork,
    target: &str,
    anchor: NaiveDateTime,
    config: &DatasetConfig,
    params: &NormalizationParams,
) -> Result<Sample> {
    config.validate()?;
    let rep = config.neighbors.representative_anchor(matrix, anchor).unwrap_or(anchor);
    let query = NeighborQuery::new(target, rep, &config.neighbors);
    let ranking = select_neighbors(matrix, network, &query, &config.neighbors.topsis)?;
    Ok(build_raw_sample(matrix, &ranking, target, anchor, config)?.normalize(params))
}

/// Chronological train/test split with its normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub params: NormalizationParams,
    pub config: DatasetConfig,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Target sensors to build samples for.
pub fn resolve_targets(matrix: &SpeedMatrix, network: &SensorNetwork, config: &DatasetConfig) -> Result<Vec<String>> {
    if config.targets.is_empty() {
        return Ok(matrix
            .sensors()
            .iter()
            .filter(|id| network.index_of(id).is_some())
            .cloned()
            .collect());
    }
    for id in &config.targets {
        if matrix.sensor_index(id).is_none() || network.index_of(id).is_none() {
            return Err(Error::NotFound(format!(
                "target sensor {id} not in both matrix and network"
            )));
        }
    }
    Ok(config.targets.clone())
}

/// Builds samples for every target at every valid anchor (days with two
/// weeks of history, anchors per [`DatasetConfig::anchor_slots`]), splits
/// them chronologically by anchor time and normalizes with the min/max of
/// the training samples.
pub fn build_dataset(matrix: &SpeedMatrix, network: &SensorNetwork, config: &DatasetConfig) -> Result<DatasetSplit> {
    config.validate()?;
    let targets = resolve_targets(matrix, network, config)?;
    let first_day = DAY_OFFSETS[CHANNELS - 1];
    let slots = config.anchor_slots();
    let anchors: Vec<NaiveDateTime> = (first_day..matrix.days())
        .flat_map(|d| slots.iter().map(move |&s| SpeedMatrix::index(d, s)))
        .map(|t| matrix.time_at(t))
        .collect();
    if anchors.is_empty() || targets.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} days of data give no valid anchors (need at least {})",
            matrix.days(),
            first_day + 1
        )));
    }

    // Rankings for each distinct (target, representative anchor).
    let mut keys: Vec<(usize, NaiveDateTime)> = Vec::new();
    let mut key_of: HashMap<(usize, NaiveDateTime), usize> = HashMap::new();
    let mut jobs = Vec::with_capacity(anchors.len() * targets.len());
    for &a in &anchors {
        let rep = config.neighbors.representative_anchor(matrix, a).unwrap_or(a);
        for ti in 0..targets.len() {
            let k = *key_of.entry((ti, rep)).or_insert_with(|| {
                keys.push((ti, rep));
                keys.len() - 1
            });
            jobs.push((ti, a, k));
        }
    }
    let rankings: Vec<RankedSensors> = keys
        .par_iter()
        .map(|&(ti, rep)| {
            let q = NeighborQuery::new(targets[ti].clone(), rep, &config.neighbors);
            select_neighbors(matrix, network, &q, &config.neighbors.topsis)
        })
        .collect::<Result<_>>()?;
    let shortfalls = rankings.iter().filter(|r| r.shortfall).count();
    if shortfalls > 0 {
        log::info!(
            "{shortfalls} of {} neighbor rankings fell short and are padded",
            rankings.len()
        );
    }

    let raw: Vec<RawSample> = jobs
        .par_iter()
        .map(|&(ti, a, k)| build_raw_sample(matrix, &rankings[k], &targets[ti], a, config))
        .collect::<Result<_>>()?;

    let n_train_anchors = ((anchors.len() as f64 * config.split_fraction).round() as usize).clamp(1, anchors.len());
    let n_train = n_train_anchors * targets.len();
    let params = NormalizationParams::fit(raw[..n_train].iter().flat_map(|s| s.values()))?;
    let mut samples: Vec<Sample> = raw.into_par_iter().map(|s| s.normalize(&params)).collect();
    let test = samples.split_off(n_train);
    log::info!(
        "dataset: {} train / {} test samples, range {:.2}..{:.2} mph",
        samples.len(),
        test.len(),
        params.min,
        params.max
    );
    Ok(DatasetSplit {
        train: samples,
        test,
        params,
        config: config.clone(),
    })
}
