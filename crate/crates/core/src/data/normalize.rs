//! Rain-rate normalization.
//!
//! Rain rates are heavy tailed, so the transform is log1p followed by an
//! affine map: `y = 2 * log1p(min(x, max)) / log1p(max) - 1`. Zero maps to
//! -1, the clip ceiling maps to +1, and the map is strictly monotone in
//! between.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    /// Clip ceiling in mm/h; rates above it saturate at +1.
    pub max_rate: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self { max_rate: 128.0 }
    }
}

impl NormalizationSpec {
    pub fn new(max_rate: f64) -> Self {
        assert!(max_rate > 0.0, "max_rate must be positive");
        Self { max_rate }
    }

    /// Map one rain rate in mm/h to `[-1, 1]`.
    pub fn normalize_value(&self, x: f64) -> Result<f64, DataError> {
        if x < 0.0 {
            return Err(DataError::NegativeInput(x));
        }
        Ok(2.0 * x.min(self.max_rate).ln_1p() / self.max_rate.ln_1p() - 1.0)
    }

    /// Inverse of [`Self::normalize_value`] on the clipped domain; values
    /// outside `[-1, 1]` saturate.
    pub fn denormalize_value(&self, y: f64) -> f64 {
        let y = y.clamp(-1.0, 1.0);
        ((y + 1.0) / 2.0 * self.max_rate.ln_1p()).exp_m1()
    }

    pub fn normalize(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>, DataError> {
        if let Some(&bad) = x.iter().find(|v| **v < 0.0) {
            return Err(DataError::NegativeInput(bad));
        }
        Ok(x.mapv(|v| 2.0 * v.min(self.max_rate).ln_1p() / self.max_rate.ln_1p() - 1.0))
    }

    pub fn denormalize(&self, y: &ArrayD<f64>) -> ArrayD<f64> {
        y.mapv(|v| self.denormalize_value(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn endpoints() {
        let spec = NormalizationSpec::default();
        assert_abs_diff_eq!(spec.normalize_value(0.0).unwrap(), -1.0, epsilon = 0.0);
        assert_abs_diff_eq!(spec.normalize_value(128.0).unwrap(), 1.0, epsilon = 1e-15);
        // values above the ceiling clip to +1
        assert_abs_diff_eq!(spec.normalize_value(500.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_sweep() {
        let spec = NormalizationSpec::default();
        for k in 0..=1000 {
            let x = 128.0 * k as f64 / 1000.0;
            let y = spec.normalize_value(x).unwrap();
            assert!((-1.0..=1.0).contains(&y));
            let back = spec.denormalize_value(y);
            assert!(
                (back - x).abs() <= 1e-5,
                "round trip drift at {x}: {back}"
            );
        }
    }

    #[test]
    fn monotone() {
        let spec = NormalizationSpec::default();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=256 {
            let y = spec.normalize_value(k as f64 * 0.5).unwrap();
            assert!(y > prev, "not strictly monotone at {k}");
            prev = y;
        }
    }

    #[test]
    fn negative_input_rejected() {
        let spec = NormalizationSpec::default();
        assert!(matches!(
            spec.normalize_value(-0.1),
            Err(DataError::NegativeInput(_))
        ));
    }
}
