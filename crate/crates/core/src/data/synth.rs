//! Seeded synthetic loop-detector data for desk-scale validation.
//!
//! Sensors sit on a line at 1 km spacing (sensor 0 is furthest upstream).
//! Each sensor sees the same rush-hour dips as its upstream neighbor, one
//! 5-minute step later, so congestion travels down the line.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::{time_of_slot, SpeedMatrix, MISSING, SLOTS_PER_DAY, STEP_MINUTES};
use super::network::{SensorInfo, SensorNetwork, EARTH_RADIUS_KM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sensor_count: usize,
    pub day_count: usize,
    pub rng_seed: u64,
    pub start_date: NaiveDate,
    /// Free-flow speed in mph.
    pub base_speed: f64,
    /// Morning (08:30) and evening (18:00) dip depths in mph.
    pub rush_dip_amplitudes: (f64, f64),
    /// Standard deviation of each dip's Gaussian profile, minutes.
    pub dip_width_min: f64,
    /// Amplitude of a slow daily sinusoid (period 24 h), mph.
    pub daily_wave_amplitude: f64,
    /// Speed added on Saturdays and Sundays, mph.
    pub weekend_uplift: f64,
    /// Standard deviation of the fixed per-sensor offset, mph.
    pub sensor_offset_std: f64,
    /// Relative standard deviation of each day's dip depth (0 = identical days).
    pub day_amplitude_jitter: f64,
    /// Standard deviation of each day's dip timing, minutes (0 = identical days).
    pub day_timing_jitter_min: f64,
    pub noise_std: f64,
    pub missing_rate: f64,
    pub outlier_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sensor_count: 10,
            day_count: 15,
            rng_seed: 7,
            start_date: NaiveDate::from_ymd_opt(2017, 6, 1).expect("valid date"),
            base_speed: 65.0,
            rush_dip_amplitudes: (25.0, 30.0),
            dip_width_min: 45.0,
            daily_wave_amplitude: 2.0,
            weekend_uplift: 4.0,
            sensor_offset_std: 2.0,
            day_amplitude_jitter: 0.25,
            day_timing_jitter_min: 20.0,
            noise_std: 1.5,
            missing_rate: 0.01,
            outlier_rate: 0.002,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        if self.sensor_count == 0 || self.day_count == 0 {
            return Err(Error::Config("synthetic data needs >= 1 sensor and >= 1 day".into()));
        }
        if !rate_ok(self.missing_rate) || !rate_ok(self.outlier_rate) {
            return Err(Error::Config("injection rates must lie in [0,1)".into()));
        }
        if self.noise_std < 0.0
            || self.dip_width_min <= 0.0
            || self.day_amplitude_jitter < 0.0
            || self.day_timing_jitter_min < 0.0
        {
            return Err(Error::Config("noise, widths and jitters must be non-negative".into()));
        }
        Ok(())
    }

    /// Same field without noise or injected anomalies.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_std: 0.0,
            missing_rate: 0.0,
            outlier_rate: 0.0,
            ..self.clone()
        }
    }
}

// Independent random streams so disabling noise or injection leaves the
// underlying field unchanged.
const STREAM_LAYOUT: u64 = 1;
const STREAM_DAYS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_INJECT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gauss(x: f64, center: f64, width: f64) -> f64 {
    let z = (x - center) / width;
    (-0.5 * z * z).exp()
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Sensor layout: a north-south line with 1 km between consecutive sensors.
pub fn line_sensors(count: usize) -> Vec<SensorInfo> {
    let deg_per_km = 180.0 / (std::f64::consts::PI * EARTH_RADIUS_KM);
    (0..count)
        .map(|i| {
            let mut s = SensorInfo::new(format!("S{i}"), 34.0 + i as f64 * deg_per_km, -118.25);
            s.highway = Some("SYN-1".into());
            s.direction = Some("S".into());
            s
        })
        .collect()
}

/// Noise-free speed of sensor `sensor` at minute-of-day `tod`.
#[allow(clippy::too_many_arguments)]
fn field_value(
    cfg: &SynthConfig,
    sensor: usize,
    offset: f64,
    tod: f64,
    weekend: bool,
    amp_scale: (f64, f64),
    shift_min: (f64, f64),
) -> f64 {
    let lag = sensor as f64 * STEP_MINUTES as f64;
    let (a_m, a_e) = cfg.rush_dip_amplitudes;
    let morning = a_m * amp_scale.0 * gauss(tod - lag, 8.5 * 60.0 + shift_min.0, cfg.dip_width_min);
    let evening = a_e * amp_scale.1 * gauss(tod - lag, 18.0 * 60.0 + shift_min.1, cfg.dip_width_min);
    let wave = cfg.daily_wave_amplitude * (2.0 * std::f64::consts::PI * tod / 1440.0).sin();
    let uplift = if weekend { cfg.weekend_uplift } else { 0.0 };
    cfg.base_speed - morning - evening + wave + uplift + offset
}

/// Generates the speed matrix and the matching line network.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(SpeedMatrix, SensorNetwork)> {
    cfg.validate()?;
    let sensors = line_sensors(cfg.sensor_count);
    let network = SensorNetwork::build(sensors.clone(), &[])?;
    let ids: Vec<String> = sensors.iter().map(|s| s.id.clone()).collect();

    let mut layout = stream(cfg.rng_seed, STREAM_LAYOUT);
    let offset_dist = Normal::new(0.0, cfg.sensor_offset_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let offsets: Vec<f64> = (0..cfg.sensor_count).map(|_| offset_dist.sample(&mut layout)).collect();

    let mut days_rng = stream(cfg.rng_seed, STREAM_DAYS);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let day_params: Vec<((f64, f64), (f64, f64))> = (0..cfg.day_count)
        .map(|_| {
            let mut amp = || (1.0 + cfg.day_amplitude_jitter * unit.sample(&mut days_rng)).max(0.0);
            let scales = (amp(), amp());
            let shifts = (
                cfg.day_timing_jitter_min * unit.sample(&mut days_rng),
                cfg.day_timing_jitter_min * unit.sample(&mut days_rng),
            );
            (scales, shifts)
        })
        .collect();

    let mut noise_rng = stream(cfg.rng_seed, STREAM_NOISE);
    let mut inject_rng = stream(cfg.rng_seed, STREAM_INJECT);
    let n = cfg.sensor_count;
    let mut values = Vec::with_capacity(cfg.day_count * SLOTS_PER_DAY * n);
    for (day, &(scales, shifts)) in day_params.iter().enumerate() {
        let weekend = is_weekend(cfg.start_date + chrono::Duration::days(day as i64));
        for slot in 0..SLOTS_PER_DAY {
            let t = time_of_slot(slot);
            let tod = (chrono::Timelike::hour(&t) * 60 + chrono::Timelike::minute(&t)) as f64;
            for (s, &offset) in offsets.iter().enumerate() {
                let mut v = field_value(cfg, s, offset, tod, weekend, scales, shifts);
                if cfg.noise_std > 0.0 {
                    v += cfg.noise_std * unit.sample(&mut noise_rng);
                }
                let u: f64 = inject_rng.random();
                if u < cfg.missing_rate {
                    v = MISSING;
                } else if u < cfg.missing_rate + cfg.outlier_rate {
                    v = if inject_rng.random::<bool>() {
                        inject_rng.random_range(130.0..250.0)
                    } else {
                        -inject_rng.random_range(1.0..20.0)
                    };
                }
                values.push(v);
            }
        }
    }
    let matrix = SpeedMatrix::new(cfg.start_date, cfg.day_count, ids, values)?;
    Ok((matrix, network))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::matrix::is_missing;

    #[test]
    fn noiseless_field_matches_formula() {
        let cfg = SynthConfig {
            sensor_count: 3,
            day_count: 2,
            day_amplitude_jitter: 0.0,
            day_timing_jitter_min: 0.0,
            sensor_offset_std: 0.0,
            ..SynthConfig::default()
        }
        .noiseless();
        let (m, _) = generate_synthetic(&cfg).unwrap();
        assert!(m.is_complete());
        for t in [0usize, 50, 132, 181 + 17] {
            let ts = m.time_at(t);
            let tod = (chrono::Timelike::hour(&ts) * 60 + chrono::Timelike::minute(&ts)) as f64;
            for s in 0..3 {
                let lag = 5.0 * s as f64;
                let expected = 65.0 - 25.0 * gauss(tod - lag, 510.0, 45.0) - 30.0 * gauss(tod - lag, 1080.0, 45.0)
                    + 2.0 * (2.0 * std::f64::consts::PI * tod / 1440.0).sin();
                assert!((m.get(t, s) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg).unwrap().0;
        let b = generate_synthetic(&cfg).unwrap().0;
        assert_eq!(a.values().len(), b.values().len());
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn missing_rate_is_binomial() {
        // 56 days x 181 slots x 10 sensors = 101_360 cells
        let cfg = SynthConfig {
            sensor_count: 10,
            day_count: 56,
            missing_rate: 0.05,
            outlier_rate: 0.0,
            ..SynthConfig::default()
        };
        let (m, _) = generate_synthetic(&cfg).unwrap();
        let cells = m.values().len() as f64;
        let expected = 0.05 * cells;
        let sigma = (cells * 0.05 * 0.95).sqrt();
        let got = m.values().iter().filter(|v| is_missing(**v)).count() as f64;
        assert!((got - expected).abs() < 3.0 * sigma, "{got} vs {expected}");
    }

    #[test]
    fn line_spacing_is_one_km() {
        let (_, net) = generate_synthetic(&SynthConfig::default()).unwrap();
        for i in 1..net.len() {
            assert!((net.distance(i - 1, i) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weekend_detection() {
        assert!(is_weekend(NaiveDate::from_ymd_opt(2017, 6, 3).unwrap()));
        assert!(!is_weekend(NaiveDate::from_ymd_opt(2017, 6, 5).unwrap()));
    }
}
