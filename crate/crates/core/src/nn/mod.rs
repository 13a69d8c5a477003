//! Dense-tensor neural-network engine: layers with forward and backward
//! passes, Xavier initialization and Adam.

pub mod conv;
mod init;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;

pub use init::{xavier_limit, xavier_uniform};
pub use layers::{Activation, ForwardCtx, Layer, LayerSpec, Mode, Param, BN_EPS, BN_MOMENTUM};
pub use loss::{mse_loss, mse_with_grad};
pub use network::Module;
pub use network::Network;
pub use optim::{AdamState, TrainingConfig};
pub use tensor::Tensor;
pub use train::{batch_ranges, evaluate_mse, fit, gather_rows, predict_batch};
