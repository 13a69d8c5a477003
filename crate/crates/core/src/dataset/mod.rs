//! Sample construction: 4-channel neighbor matrices, 12-step targets,
//! min-max normalization and chronological splits.

mod archive;
mod normalize;
mod sample;

pub use archive::{load_dataset, save_dataset, META_FILE, SAMPLES_FILE};
pub use normalize::NormalizationParams;
pub use sample::{
    build_dataset, build_raw_sample, build_sample, resolve_targets, stack_x, stack_y, DatasetConfig, DatasetSplit,
    RawSample, Sample, CHANNELS, DAY_OFFSETS, HORIZON,
};
