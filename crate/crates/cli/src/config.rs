use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stsc_core::data::{CleaningConfig, SynthConfig};
use stsc_core::dataset::DatasetConfig;
use stsc_core::eval::{MlpConfig, HORIZONS_MIN, KNN_K};
use stsc_core::model::{ModelSpec, PhasePlan};
use stsc_core::nn::TrainingConfig;
use stsc_core::{Error, Result};

/// Input and output locations. Relative input paths resolve against the
/// output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// `timestamp,sensor_id,speed_mph` readings; default `<out>/speeds.csv`.
    pub speeds: Option<PathBuf>,
    /// `sensor_id,latitude,longitude`; default `<out>/sensors.csv`.
    pub sensors: Option<PathBuf>,
    /// Optional `from,to,km` road-distance overrides.
    pub distances: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct TrainingSection {
    /// Optimizer settings and epoch count for each auto-encoder.
    pub pretrain: TrainingConfig,
    /// Optimizer settings for both cross-training phases.
    pub cross: TrainingConfig,
    pub phases: PhasePlan,
    /// DAE_X sees at most this many training samples, evenly spaced.
    pub pretrain_x_sample_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub knn_k: usize,
    pub mlp: MlpConfig,
    /// Horizons compared by the Kruskal-Wallis / Dunn step.
    pub stats_horizons_min: Vec<u32>,
    pub alpha: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            knn_k: KNN_K,
            mlp: MlpConfig::default(),
            stats_horizons_min: HORIZONS_MIN.to_vec(),
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub cleaning: CleaningConfig,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub training: TrainingSection,
    pub evaluation: EvaluationConfig,
    /// Seeds model initialization and every training shuffle.
    pub rng_seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.cleaning.validate()?;
        self.dataset.validate()?;
        self.model.validate()?;
        self.training.pretrain.validate()?;
        self.training.cross.validate()?;
        self.evaluation.mlp.training.validate()?;
        let [steps, count, channels] = self.dataset.x_shape();
        if self.model.x_shape != [steps, count, channels] {
            return Err(Error::Config(format!(
                "model.x_shape {:?} does not match the dataset sample shape {:?}",
                self.model.x_shape,
                [steps, count, channels]
            )));
        }
        if self.model.horizon != stsc_core::dataset::HORIZON {
            return Err(Error::Config(format!(
                "model.horizon {} must equal the sample horizon {}",
                self.model.horizon,
                stsc_core::dataset::HORIZON
            )));
        }
        if self.evaluation.knn_k == 0 {
            return Err(Error::Config("evaluation.knn_k must be at least 1".into()));
        }
        if !(self.evaluation.alpha > 0.0 && self.evaluation.alpha < 1.0) {
            return Err(Error::Config(format!(
                "evaluation.alpha {} outside (0,1)",
                self.evaluation.alpha
            )));
        }
        for &h in &self.evaluation.stats_horizons_min {
            stsc_core::eval::horizon_index(h)?;
        }
        if self.training.pretrain_x_sample_cap == Some(0) {
            return Err(Error::Config("training.pretrain_x_sample_cap must be positive".into()));
        }
        Ok(())
    }

    /// Applies `rng_seed` to every training stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self.training.pretrain.rng_seed = seed;
        self.training.cross.rng_seed = seed.wrapping_add(1);
        self.evaluation.mlp.training.rng_seed = seed.wrapping_add(2);
        self
    }
}

/// Resolved artifact locations.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
    pub speeds: PathBuf,
    pub sensors: PathBuf,
    pub distances: Option<PathBuf>,
}

impl Layout {
    pub fn new(out: PathBuf, paths: &PathsConfig) -> Self {
        let resolve = |p: &Option<PathBuf>, default: &str| match p {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => out.join(p),
            None => out.join(default),
        };
        Self {
            speeds: resolve(&paths.speeds, "speeds.csv"),
            sensors: resolve(&paths.sensors, "sensors.csv"),
            distances: paths
                .distances
                .as_ref()
                .map(|p| if p.is_absolute() { p.clone() } else { out.join(p) }),
            out,
        }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn cleaned(&self) -> PathBuf {
        self.file("cleaned_speeds.csv")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.file("dataset")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.file(&format!("{name}.ckpt"))
    }
}
