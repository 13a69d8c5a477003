//! On-disk dataset: `meta.json` plus `samples.bin` (little-endian f32, X then
//! Y of each sample, train samples first, in `meta.json` order).

use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::normalize::NormalizationParams;
use super::sample::{DatasetConfig, DatasetSplit, Sample, HORIZON};
use crate::data::{format_timestamp, parse_timestamp, write_atomic};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const META_FILE: &str = "meta.json";
pub const SAMPLES_FILE: &str = "samples.bin";
const FORMAT: &str = "stsc-dataset-1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleMeta {
    target: String,
    anchor: String,
    neighbors: Vec<String>,
    padded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format: String,
    x_shape: [usize; 3],
    y_len: usize,
    params: NormalizationParams,
    config: DatasetConfig,
    train: Vec<SampleMeta>,
    test: Vec<SampleMeta>,
}

fn sample_meta(s: &Sample) -> SampleMeta {
    SampleMeta {
        target: s.target.clone(),
        anchor: format_timestamp(s.anchor),
        neighbors: s.neighbors.clone(),
        padded: s.padded,
    }
}

pub fn save_dataset(dir: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let x_shape = split.config.x_shape();
    let meta = Meta {
        format: FORMAT.into(),
        x_shape,
        y_len: HORIZON,
        params: split.params,
        config: split.config.clone(),
        train: split.train.iter().map(sample_meta).collect(),
        test: split.test.iter().map(sample_meta).collect(),
    };
    let per_sample = x_shape.iter().product::<usize>() + HORIZON;
    let mut bytes = Vec::with_capacity(split.len() * per_sample * 4);
    for s in split.train.iter().chain(&split.test) {
        for v in s.x.data().iter().chain(&s.y) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_atomic(&dir.join(SAMPLES_FILE), &bytes)?;
    write_atomic(&dir.join(META_FILE), &serde_json::to_vec_pretty(&meta)?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Loads an archive written by [`save_dataset`]. Values come back rounded
/// to 32-bit precision.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let meta: Meta = serde_json::from_slice(&read_file(&dir.join(META_FILE))?)?;
    if meta.format != FORMAT {
        return Err(Error::Version(format!(
            "dataset format {}, expected {FORMAT}",
            meta.format
        )));
    }
    let bytes = read_file(&dir.join(SAMPLES_FILE))?;
    let x_len: usize = meta.x_shape.iter().product();
    let per_sample = x_len + meta.y_len;
    let count = meta.train.len() + meta.test.len();
    if bytes.len() != count * per_sample * 4 {
        return Err(Error::Truncated(format!(
            "{SAMPLES_FILE} has {} bytes, expected {}",
            bytes.len(),
            count * per_sample * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut samples = Vec::with_capacity(count);
    for (i, m) in meta.train.iter().chain(&meta.test).enumerate() {
        let chunk = &values[i * per_sample..(i + 1) * per_sample];
        let anchor: NaiveDateTime = parse_timestamp(&m.anchor).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("bad anchor {} in {META_FILE}", m.anchor),
        })?;
        samples.push(Sample {
            x: Tensor::new(meta.x_shape.to_vec(), chunk[..x_len].to_vec())?,
            y: chunk[x_len..].to_vec(),
            target: m.target.clone(),
            anchor,
            neighbors: m.neighbors.clone(),
            padded: m.padded,
        });
    }
    let test = samples.split_off(meta.train.len());
    Ok(DatasetSplit {
        train: samples,
        test,
        params: meta.params,
        config: meta.config,
    })
}
