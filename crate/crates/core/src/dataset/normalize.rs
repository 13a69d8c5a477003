use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global min-max scaling to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: f64,
    pub max: f64,
}

impl NormalizationParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::DegenerateRange { min, max });
        }
        Ok(Self { min, max })
    }

    /// Min and max over `values`; missing (NaN) entries are an error.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite("normalization input".into()));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Self::new(lo, hi)
    }

    pub fn normalize(&self, z: f64) -> f64 {
        (z - self.min) / (self.max - self.min)
    }

    /// Normalizes and clamps to [0, 1] for values outside the fitted range.
    pub fn normalize_clamped(&self, z: f64) -> f64 {
        self.normalize(z).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * (self.max - self.min) + self.min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let p = NormalizationParams::new(0.0, 70.0).unwrap();
        assert_eq!(p.normalize(35.0), 0.5);
        assert_eq!(p.normalize(0.0), 0.0);
        assert_eq!(p.normalize(70.0), 1.0);
        assert_eq!(p.normalize_clamped(80.0), 1.0);
        assert_eq!(p.normalize_clamped(-3.0), 0.0);
        for z in [0.0, 12.345, 33.3, 69.999] {
            assert!((p.denormalize(p.normalize(z)) - z).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate() {
        assert!(matches!(
            NormalizationParams::new(5.0, 5.0),
            Err(Error::DegenerateRange { .. })
        ));
        assert!(NormalizationParams::fit([3.0, 3.0]).is_err());
        assert_eq!(
            NormalizationParams::fit([4.0, 1.0, 9.0]).unwrap(),
            NormalizationParams::new(1.0, 9.0).unwrap()
        );
    }
}
