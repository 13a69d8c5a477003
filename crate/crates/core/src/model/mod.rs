//! The forecasting model: DAE_X over historical inputs, DAE_Y over future
//! targets, and the latent feature mapping module (LFMM) that cross-connects
//! E_X with D_Y.

mod checkpoint;
mod modules;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind, FORMAT_VERSION, MAGIC};
pub use modules::{
    assemble_cross_connected, build_dae_x, build_dae_y, build_lfmm, predict, pretrain_dae, train_cross, Autoencoder,
    CrossCurves, CrossModel, Phase, PhasePlan,
};
pub use spec::{AutoencoderLayout, ModelSpec};
