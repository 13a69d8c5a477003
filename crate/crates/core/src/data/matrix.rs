use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};

use crate::error::{Error, Result};

/// Sampling interval of the loop detectors, in minutes.
pub const STEP_MINUTES: u32 = 5;
/// First retained time of day (07:00).
pub const DAY_START_MIN: u32 = 7 * 60;
/// Last retained time of day (22:00), inclusive.
pub const DAY_END_MIN: u32 = 22 * 60;
/// Grid points per day window: 07:00, 07:05, ..., 22:00.
pub const SLOTS_PER_DAY: usize = ((DAY_END_MIN - DAY_START_MIN) / STEP_MINUTES) as usize + 1;

/// Marker for a missing observation.
pub const MISSING: f64 = f64::NAN;

pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// Slot index of a time of day inside the daily window, if it lies on the grid.
pub fn slot_of(time: NaiveTime) -> Option<usize> {
    if time.second() != 0 || time.nanosecond() != 0 {
        return None;
    }
    let minute = time.hour() * 60 + time.minute();
    if !minute.is_multiple_of(STEP_MINUTES) || !(DAY_START_MIN..=DAY_END_MIN).contains(&minute) {
        return None;
    }
    Some(((minute - DAY_START_MIN) / STEP_MINUTES) as usize)
}

pub fn time_of_slot(slot: usize) -> NaiveTime {
    let minute = DAY_START_MIN + slot as u32 * STEP_MINUTES;
    NaiveTime::from_hms_opt(minute / 60, minute % 60, 0).expect("slot inside the day")
}

/// Per-sensor speed series on a uniform 5-minute grid restricted to the
/// 07:00-22:00 window of each consecutive calendar day.
///
/// Values are stored time-major (`values[t * n + s]`); missing cells hold
/// [`MISSING`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedMatrix {
    start: NaiveDate,
    days: usize,
    sensors: Vec<String>,
    values: Vec<f64>,
}

impl SpeedMatrix {
    pub fn new(start: NaiveDate, days: usize, sensors: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != days * SLOTS_PER_DAY * sensors.len() {
            return Err(Error::Dimension(format!(
                "speed matrix needs {} values for {days} days x {} sensors, got {}",
                days * SLOTS_PER_DAY * sensors.len(),
                sensors.len(),
                values.len()
            )));
        }
        Ok(Self {
            start,
            days,
            sensors,
            values,
        })
    }

    /// An all-missing matrix.
    pub fn empty_grid(start: NaiveDate, days: usize, sensors: Vec<String>) -> Self {
        let len = days * SLOTS_PER_DAY * sensors.len();
        Self {
            start,
            days,
            sensors,
            values: vec![MISSING; len],
        }
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn date_of_day(&self, day: usize) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }

    /// Number of time instances τ.
    pub fn len_times(&self) -> usize {
        self.days * SLOTS_PER_DAY
    }

    pub fn sensors(&self) -> &[String] {
        &self.sensors
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s == id)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_at(&self, t: usize) -> NaiveDateTime {
        let day = t / SLOTS_PER_DAY;
        self.date_of_day(day).and_time(time_of_slot(t % SLOTS_PER_DAY))
    }

    pub fn times(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        (0..self.len_times()).map(|t| self.time_at(t))
    }

    /// Row index of a timestamp, if it lies on the grid.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let day = (ts.date() - self.start).num_days();
        if day < 0 || day as usize >= self.days {
            return None;
        }
        slot_of(ts.time()).map(|slot| day as usize * SLOTS_PER_DAY + slot)
    }

    /// Row index from day and slot.
    pub fn index(day: usize, slot: usize) -> usize {
        day * SLOTS_PER_DAY + slot
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.sensors.len() + s]
    }

    pub fn set(&mut self, t: usize, s: usize, v: f64) {
        let n = self.sensors.len();
        self.values[t * n + s] = v;
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        let n = self.sensors.len();
        self.values.iter().skip(s).step_by(n).copied().collect()
    }

    /// Values of sensor `s` for one day window.
    pub fn day_series(&self, s: usize, day: usize) -> Vec<f64> {
        (0..SLOTS_PER_DAY)
            .map(|slot| self.get(Self::index(day, slot), s))
            .collect()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| is_missing(**v)).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Keeps only the listed sensors, in the listed order.
    pub fn select_sensors(&self, ids: &[String]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|id| {
                self.sensor_index(id)
                    .ok_or_else(|| Error::NotFound(format!("sensor {id} not in speed matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.len_times() * idx.len());
        for t in 0..self.len_times() {
            values.extend(idx.iter().map(|&s| self.get(t, s)));
        }
        Ok(Self {
            start: self.start,
            days: self.days,
            sensors: ids.to_vec(),
            values,
        })
    }

    /// Builds from per-sensor columns (`columns[s][t]`).
    pub fn from_columns(start: NaiveDate, days: usize, sensors: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let tau = days * SLOTS_PER_DAY;
        if columns.len() != sensors.len() || columns.iter().any(|c| c.len() != tau) {
            return Err(Error::Dimension("column lengths do not match the grid".into()));
        }
        let mut values = Vec::with_capacity(tau * sensors.len());
        for t in 0..tau {
            values.extend(columns.iter().map(|c| c[t]));
        }
        Self::new(start, days, sensors, values)
    }
}
