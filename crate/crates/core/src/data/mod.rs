//! Raw data ingestion, anomaly cleaning and synthetic data generation.

mod clean;
mod io;
mod matrix;
mod network;
mod synth;

pub use clean::{clean_missing, clean_outliers, CleaningConfig, DroppedSensor};
pub use io::{
    format_timestamp, load_distances_csv, load_sensors_csv, load_speed_csv, parse_timestamp, read_distances_csv,
    read_sensors_csv, read_speed_csv, write_atomic, write_sensors_csv, write_speed_csv, TIMESTAMP_FORMAT,
};
pub use matrix::{
    is_missing, slot_of, time_of_slot, SpeedMatrix, DAY_END_MIN, DAY_START_MIN, MISSING, SLOTS_PER_DAY, STEP_MINUTES,
};
pub use network::{haversine_km, SensorInfo, SensorNetwork, EARTH_RADIUS_KM};
pub use synth::{generate_synthetic, is_weekend, line_sensors, SynthConfig};
