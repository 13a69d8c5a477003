//! CSV ingestion and export for speed records, sensor metadata and distances.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};

use super::matrix::{is_missing, SpeedMatrix, DAY_END_MIN, DAY_START_MIN, MISSING, STEP_MINUTES};
use super::network::SensorInfo;
use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT).ok()
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, got {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input)
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Loads a `timestamp,sensor_id,speed_mph` file into a [`SpeedMatrix`].
///
/// Rows outside 07:00-22:00 are discarded; absent cells become missing.
pub fn load_speed_csv(path: &Path) -> Result<SpeedMatrix> {
    read_speed_csv(open(path)?)
}

pub fn read_speed_csv<R: Read>(input: R) -> Result<SpeedMatrix> {
    let mut rdr = reader(input);
    check_header(rdr.headers()?, &["timestamp", "sensor_id", "speed_mph"])?;

    let mut sensors: Vec<String> = Vec::new();
    let mut sensor_idx: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<(NaiveDateTime, usize, f64, usize)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let parse_err = |message: String| Error::Parse { line, message };
        if rec.len() < 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", rec.len())));
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| parse_err(format!("bad timestamp {:?}", &rec[0])))?;
        let minute = ts.hour() * 60 + ts.minute();
        if minute % STEP_MINUTES != 0 {
            return Err(parse_err(format!("timestamp {} not on a 5-minute boundary", &rec[0])));
        }
        let id = rec[1].trim().to_string();
        if id.is_empty() {
            return Err(parse_err("empty sensor_id".into()));
        }
        let raw = rec[2].trim();
        let speed = if raw.is_empty() {
            MISSING
        } else {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("bad speed {raw:?}")))?
        };
        let s = *sensor_idx.entry(id.clone()).or_insert_with(|| {
            sensors.push(id);
            sensors.len() - 1
        });
        if (DAY_START_MIN..=DAY_END_MIN).contains(&minute) {
            rows.push((ts, s, speed, line));
        }
    }
    let (Some(first), Some(last)) = (
        rows.iter().map(|r| r.0.date()).min(),
        rows.iter().map(|r| r.0.date()).max(),
    ) else {
        return Err(Error::EmptyInput("speed file has no rows inside 07:00-22:00".into()));
    };
    let days = (last - first).num_days() as usize + 1;
    let mut m = SpeedMatrix::empty_grid(first, days, sensors.clone());
    let mut seen = vec![false; m.len_times() * sensors.len()];
    for (ts, s, v, line) in rows {
        let t = m.index_of(ts).expect("in-window timestamp maps onto the grid");
        let cell = t * sensors.len() + s;
        if seen[cell] {
            return Err(Error::Duplicate {
                line,
                sensor: sensors[s].clone(),
                timestamp: format_timestamp(ts),
            });
        }
        seen[cell] = true;
        m.set(t, s, v);
    }
    Ok(m)
}

/// Writes a matrix back to the speeds CSV schema (missing cells as empty fields).
pub fn write_speed_csv(matrix: &SpeedMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "timestamp,sensor_id,speed_mph").unwrap();
    for t in 0..matrix.len_times() {
        let ts = format_timestamp(matrix.time_at(t));
        for (s, id) in matrix.sensors().iter().enumerate() {
            let v = matrix.get(t, s);
            if is_missing(v) {
                writeln!(out, "{ts},{id},").unwrap();
            } else {
                writeln!(out, "{ts},{id},{v}").unwrap();
            }
        }
    }
    out
}

/// Loads `sensor_id,latitude,longitude,highway,direction`.
pub fn load_sensors_csv(path: &Path) -> Result<Vec<SensorInfo>> {
    read_sensors_csv(open(path)?)
}

pub fn read_sensors_csv<R: Read>(input: R) -> Result<Vec<SensorInfo>> {
    let mut rdr = reader(input);
    check_header(rdr.headers()?, &["sensor_id", "latitude", "longitude"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let num = |i: usize, what: &str| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("bad {what} {:?}", rec.get(i).unwrap_or("")),
                })
        };
        let opt = |i: usize| rec.get(i).map(str::trim).filter(|v| !v.is_empty()).map(String::from);
        out.push(SensorInfo {
            id: rec.get(0).unwrap_or("").trim().to_string(),
            latitude: num(1, "latitude")?,
            longitude: num(2, "longitude")?,
            highway: opt(3),
            direction: opt(4),
        });
    }
    Ok(out)
}

pub fn write_sensors_csv(sensors: &[SensorInfo]) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "sensor_id,latitude,longitude,highway,direction").unwrap();
    for s in sensors {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.id,
            s.latitude,
            s.longitude,
            s.highway.as_deref().unwrap_or(""),
            s.direction.as_deref().unwrap_or("")
        )
        .unwrap();
    }
    out
}

/// Loads `from_id,to_id,km` rows.
pub fn load_distances_csv(path: &Path) -> Result<Vec<(String, String, f64)>> {
    read_distances_csv(open(path)?)
}

pub fn read_distances_csv<R: Read>(input: R) -> Result<Vec<(String, String, f64)>> {
    let mut rdr = reader(input);
    check_header(rdr.headers()?, &["from_id", "to_id", "km"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let km = rec
            .get(2)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("bad distance {:?}", rec.get(2).unwrap_or("")),
            })?;
        out.push((rec[0].trim().to_string(), rec[1].trim().to_string(), km));
    }
    Ok(out)
}

/// Writes through a temporary sibling file and renames it into place, so a
/// reader never observes a partially written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
