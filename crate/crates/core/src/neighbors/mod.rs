//! Spatio-temporal neighbor selection: distance filtering plus a TOPSIS
//! ranking over correlation, distance and mean speed difference.

mod select;
mod topsis;

pub use select::{
    abs_mean_diff, pearson_corr, rankings_csv, select_neighbors, NeighborConfig, NeighborQuery, RankedSensor,
    RankedSensors,
};
pub use topsis::{topsis_closeness, topsis_rank, TopsisSpec};
