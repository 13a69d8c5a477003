use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use chrono::NaiveDateTime;

use crate::data::{is_missing, SpeedMatrix, SLOTS_PER_DAY};
use crate::dataset::{Sample, HORIZON};
use crate::error::{Error, Result};
use crate::nn::{fit, predict_batch, Activation, AdamState, LayerSpec, Network, Tensor, TrainingConfig};

/// Default neighbor count of the kNN baseline.
pub const KNN_K: usize = 17;
/// Added to neighbor distances before inverting them.
pub const KNN_EPSILON: f64 = 1e-9;

fn locate(matrix: &SpeedMatrix, target: &str, anchor: NaiveDateTime) -> Result<(usize, usize)> {
    let s = matrix
        .sensor_index(target)
        .ok_or_else(|| Error::NotFound(format!("sensor {target} not in speed matrix")))?;
    let t = matrix
        .index_of(anchor)
        .ok_or_else(|| Error::InsufficientHistory(format!("{anchor} is outside the data grid")))?;
    Ok((s, t))
}

fn read(matrix: &SpeedMatrix, t: usize, s: usize, what: &str) -> Result<f64> {
    let v = matrix.get(t, s);
    if is_missing(v) {
        return Err(Error::InsufficientHistory(format!(
            "missing {what} at {}",
            matrix.time_at(t)
        )));
    }
    Ok(v)
}

/// Observed speeds at t0+5, ..., t0+60 min.
pub fn actual_future(matrix: &SpeedMatrix, target: &str, anchor: NaiveDateTime) -> Result<Vec<f64>> {
    let (s, t) = locate(matrix, target, anchor)?;
    if t % SLOTS_PER_DAY + HORIZON >= SLOTS_PER_DAY {
        return Err(Error::InsufficientHistory(format!(
            "{anchor} + 60 min leaves the day window"
        )));
    }
    (1..=HORIZON).map(|k| read(matrix, t + k, s, "future speed")).collect()
}

/// Repeats speed(p, t0) for every horizon.
pub fn persistence(matrix: &SpeedMatrix, target: &str, anchor: NaiveDateTime) -> Result<Vec<f64>> {
    let (s, t) = locate(matrix, target, anchor)?;
    let v = read(matrix, t, s, "current speed")?;
    Ok(vec![v; HORIZON])
}

/// Mean of the same-time-of-day speeds on days d-1, d-7 and d-14.
pub fn historical_average(matrix: &SpeedMatrix, target: &str, anchor: NaiveDateTime) -> Result<Vec<f64>> {
    let (s, t) = locate(matrix, target, anchor)?;
    let (day, slot) = (t / SLOTS_PER_DAY, t % SLOTS_PER_DAY);
    if day < 14 {
        return Err(Error::InsufficientHistory(format!(
            "{anchor} has no day d-14 in the data"
        )));
    }
    if slot + HORIZON >= SLOTS_PER_DAY {
        return Err(Error::InsufficientHistory(format!(
            "{anchor} + 60 min leaves the day window"
        )));
    }
    (1..=HORIZON)
        .map(|k| {
            let mut sum = 0.0;
            for back in [1, 7, 14] {
                sum += read(matrix, SpeedMatrix::index(day - back, slot + k), s, "past-day speed")?;
            }
            Ok(sum / 3.0)
        })
        .collect()
}

/// The target sensor's own normalized history (channel 0) from a sample.
pub fn target_history(sample: &Sample) -> Vec<f64> {
    let col = sample.neighbors.iter().position(|n| *n == sample.target).unwrap_or(0);
    let shape = sample.x.shape();
    (0..shape[0]).map(|i| sample.x.at(&[i, col, 0])).collect()
}

/// Inverse-distance-weighted k-nearest-neighbor regressor.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    k: usize,
}

impl KnnRegressor {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("kNN needs at least one training pair".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if k == 0 || k > inputs.len() {
            return Err(Error::Config(format!("k = {k} outside 1..={}", inputs.len())));
        }
        let (d, h) = (inputs[0].len(), targets[0].len());
        if inputs.iter().any(|v| v.len() != d) || targets.iter().any(|v| v.len() != h) {
            return Err(Error::Dimension("ragged kNN training vectors".into()));
        }
        Ok(Self { inputs, targets, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Indices and distances of the k nearest training inputs, nearest first.
    /// Equal distances go to the lower index.
    pub fn neighbors(&self, query: &[f64]) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.inputs[0].len() {
            return Err(Error::Dimension(format!(
                "query of length {} against inputs of length {}",
                query.len(),
                self.inputs[0].len()
            )));
        }
        let mut d: Vec<(f64, usize)> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, v)| (v.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        Ok(d.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect())
    }

    pub fn predict(&self, query: &[f64]) -> Result<Vec<f64>> {
        let nn = self.neighbors(query)?;
        let mut out = vec![0.0; self.targets[0].len()];
        let mut wsum = 0.0;
        for (i, dist) in nn {
            let w = 1.0 / (dist + KNN_EPSILON);
            wsum += w;
            for (o, t) in out.iter_mut().zip(&self.targets[i]) {
                *o += w * t;
            }
        }
        out.iter_mut().for_each(|o| *o /= wsum);
        Ok(out)
    }

    pub fn predict_many(&self, queries: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        queries.par_iter().map(|q| self.predict(q)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub training: TrainingConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            training: TrainingConfig {
                epochs: 100,
                ..TrainingConfig::default()
            },
        }
    }
}

/// Fully connected network with sigmoid units on every layer.
#[derive(Debug, Clone)]
pub struct MlpBaseline {
    pub net: Network,
    pub input_len: usize,
    pub output_len: usize,
}

impl MlpBaseline {
    pub fn new(input_len: usize, output_len: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_len == 0 || output_len == 0 || hidden.contains(&0) {
            return Err(Error::Config("MLP layer widths must be positive".into()));
        }
        let mut specs = Vec::new();
        let mut prev = input_len;
        for &w in hidden.iter().chain(std::iter::once(&output_len)) {
            specs.push(LayerSpec::Dense {
                inputs: prev,
                outputs: w,
            });
            specs.push(LayerSpec::act(Activation::Sigmoid));
            prev = w;
        }
        Ok(Self {
            net: Network::from_specs(specs, rng)?,
            input_len,
            output_len,
        })
    }

    /// Trains on normalized `[N, input_len]` / `[N, output_len]` pairs.
    pub fn train(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        config: &TrainingConfig,
        on_epoch: &mut dyn FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let mut adam = AdamState::new();
        fit(&mut self.net, x, y, config, &mut adam, &mut rng, on_epoch)
    }

    /// Normalized predictions, `[N, output_len]`.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        predict_batch(&mut self.net, x, 1024, &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[1] != self.input_len {
            return Err(Error::Dimension(format!(
                "MLP expects [N, {}] inputs, got {:?}",
                self.input_len,
                x.shape()
            )));
        }
        Ok(())
    }
}

/// Stacks equal-length vectors into an `[N, len]` tensor.
pub fn rows_to_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let len = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != len) {
        return Err(Error::Dimension("ragged rows".into()));
    }
    Tensor::new(vec![rows.len(), len], rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_exact_match_dominates() {
        let knn = KnnRegressor::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![vec![5.0], vec![7.0], vec![9.0]],
            3,
        )
        .unwrap();
        let p = knn.predict(&[1.0]).unwrap();
        assert!((p[0] - 7.0).abs() < 1e-6);
        assert!(KnnRegressor::new(vec![vec![0.0]], vec![vec![1.0]], 2).is_err());
    }

    #[test]
    fn mlp_shapes() {
        let mut m = MlpBaseline::new(60, 12, &[64, 32], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let out = m.predict(&Tensor::zeros(&[3, 60])).unwrap();
        assert_eq!(out.shape(), &[3, 12]);
        assert!(m.predict(&Tensor::zeros(&[3, 59])).is_err());
    }
}
