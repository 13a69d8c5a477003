use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Sensor metadata row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorInfo {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub highway: Option<String>,
    pub direction: Option<String>,
}

impl SensorInfo {
    pub fn new(id: impl Into<String>, latitude: f64, longitude: f64) -> Self {
        Self {
            id: id.into(),
            latitude,
            longitude,
            highway: None,
            direction: None,
        }
    }
}

/// Great-circle distance in kilometers.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Sensors with a symmetric, zero-diagonal distance matrix in kilometers.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    sensors: Vec<SensorInfo>,
    distance: Vec<f64>,
}

impl SensorNetwork {
    /// Computes haversine distances between all sensors. Explicit
    /// `(from, to, km)` entries override the computed value for that pair
    /// in both directions.
    pub fn build(sensors: Vec<SensorInfo>, overrides: &[(String, String, f64)]) -> Result<Self> {
        for s in &sensors {
            if !(s.latitude.abs() <= 90.0 && s.longitude.abs() <= 180.0) {
                return Err(Error::CoordinateRange {
                    sensor: s.id.clone(),
                    lat: s.latitude,
                    lon: s.longitude,
                });
            }
        }
        let n = sensors.len();
        let mut distance = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&sensors[i], &sensors[j]);
                let d = haversine_km(a.latitude, a.longitude, b.latitude, b.longitude);
                distance[i * n + j] = d;
                distance[j * n + i] = d;
            }
        }
        let mut net = Self { sensors, distance };
        for (from, to, km) in overrides {
            let i = net.require(from)?;
            let j = net.require(to)?;
            if i != j {
                net.distance[i * n + j] = *km;
                net.distance[j * n + i] = *km;
            }
        }
        Ok(net)
    }

    fn require(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::NotFound(format!("sensor {id} not in network")))
    }

    pub fn sensors(&self) -> &[SensorInfo] {
        &self.sensors
    }

    pub fn ids(&self) -> Vec<String> {
        self.sensors.iter().map(|s| s.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance[i * self.sensors.len() + j]
    }

    pub fn distance_by_id(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.distance(self.require(a)?, self.require(b)?))
    }

    /// Restricts the network to `ids`, in that order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let idx = ids.iter().map(|id| self.require(id)).collect::<Result<Vec<_>>>()?;
        let n = idx.len();
        let mut distance = vec![0.0; n * n];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                distance[a * n + b] = self.distance(i, j);
            }
        }
        Ok(Self {
            sensors: idx.iter().map(|&i| self.sensors[i].clone()).collect(),
            distance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_coordinates_zero() {
        assert_eq!(haversine_km(34.0, -118.0, 34.0, -118.0), 0.0);
    }

    #[test]
    fn one_degree_of_latitude() {
        let d = haversine_km(0.0, 0.0, 1.0, 0.0);
        assert!((d - 6371.0 * std::f64::consts::PI / 180.0).abs() < 1e-9);
        assert!((d - 111.195).abs() < 0.001);
    }

    #[test]
    fn rejects_bad_coordinates() {
        let r = SensorNetwork::build(vec![SensorInfo::new("x", 91.0, 0.0)], &[]);
        assert!(matches!(r, Err(Error::CoordinateRange { .. })));
        let r = SensorNetwork::build(vec![SensorInfo::new("x", 0.0, -181.0)], &[]);
        assert!(r.is_err());
    }

    #[test]
    fn override_is_symmetric() {
        let net = SensorNetwork::build(
            vec![SensorInfo::new("a", 0.0, 0.0), SensorInfo::new("b", 0.0, 1.0)],
            &[("b".into(), "a".into(), 2.5)],
        )
        .unwrap();
        assert_eq!(net.distance(0, 1), 2.5);
        assert_eq!(net.distance(1, 0), 2.5);
    }

    proptest! {
        #[test]
        fn symmetric_zero_diagonal_triangle(coords in prop::collection::vec((-80.0f64..80.0, -179.0f64..179.0), 3..8)) {
            let sensors: Vec<_> = coords.iter().enumerate()
                .map(|(i, &(la, lo))| SensorInfo::new(format!("s{i}"), la, lo)).collect();
            let net = SensorNetwork::build(sensors, &[]).unwrap();
            let n = net.len();
            for i in 0..n {
                prop_assert_eq!(net.distance(i, i), 0.0);
                for j in 0..n {
                    prop_assert!((net.distance(i, j) - net.distance(j, i)).abs() < 1e-9);
                    prop_assert!(net.distance(i, j) >= 0.0);
                    for k in 0..n {
                        prop_assert!(net.distance(i, k) <= net.distance(i, j) + net.distance(j, k) + 1e-6);
                    }
                }
            }
        }
    }
}
