//! Multistep traffic-speed forecasting from spatio-temporal neighbor data.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`] - dense tensor engine (convolutions, batch-norm, Adam, ...)
//! * [`data`] - CSV ingestion, cleaning and the synthetic loop-detector generator
//! * [`neighbors`] - distance filtering plus TOPSIS ranking of candidate sensors
//! * [`dataset`] - 4-channel sample construction, normalization and splits
//! * [`model`] - the two auto-encoders, the latent mapping module and training
//! * [`eval`] - metrics, baselines and rank-based significance tests

pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod neighbors;
pub mod nn;

pub use error::{Error, Result};
