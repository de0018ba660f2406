//! Batched image and feature-map value types.

use crate::error::CoreError;
use ndarray::{Array4, Axis};

/// Batched raster image, channels-first `[batch, channels, height, width]`.
///
/// Photographic content lives in [-1, 1]; one-hot masks hold {0, 1} with the
/// channels summing to one at every pixel. Spatial dims are square powers of
/// two so the encoder/generator pyramids divide evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array4<f64>,
}

impl ImageTensor {
    /// Construct with the shared shape checks (square power-of-two, finite).
    pub fn new(data: Array4<f64>) -> Result<Self, CoreError> {
        let (_, _, h, w) = data.dim();
        if h != w {
            return Err(CoreError::Shape {
                context: "ImageTensor".into(),
                expected: "square spatial dims".into(),
                got: format!("{h}x{w}"),
            });
        }
        if !h.is_power_of_two() || h < 2 {
            return Err(CoreError::Shape {
                context: "ImageTensor".into(),
                expected: "power-of-two spatial size >= 2".into(),
                got: format!("{h}"),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Invariant(
                "ImageTensor contains non-finite values".into(),
            ));
        }
        Ok(ImageTensor { data })
    }

    /// Construct and additionally verify the photographic [-1, 1] range.
    pub fn photo(data: Array4<f64>) -> Result<Self, CoreError> {
        if let Some(v) = data.iter().find(|v| v.abs() > 1.0 + 1e-9) {
            return Err(CoreError::Invariant(format!(
                "photo value {v} outside [-1, 1]"
            )));
        }
        Self::new(data)
    }

    /// Construct a one-hot mask and verify the per-pixel channel sum is 1.
    pub fn one_hot(data: Array4<f64>) -> Result<Self, CoreError> {
        for v in data.iter() {
            if *v != 0.0 && *v != 1.0 {
                return Err(CoreError::Invariant(format!(
                    "one-hot mask value {v} not in {{0, 1}}"
                )));
            }
        }
        let sums = data.sum_axis(Axis(1));
        if let Some(s) = sums.iter().find(|s| (**s - 1.0).abs() > 1e-12) {
            return Err(CoreError::Invariant(format!(
                "one-hot mask channel sum {s} != 1"
            )));
        }
        Self::new(data)
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn size(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.data
    }
}

/// Batched spatial feature grid `[batch, C, H, W]`; finite values only.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array4<f64>,
}

impl FeatureMap {
    pub fn new(data: Array4<f64>) -> Result<Self, CoreError> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Invariant(
                "FeatureMap contains non-finite values".into(),
            ));
        }
        Ok(FeatureMap { data })
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn rejects_non_square() {
        let a = Array4::zeros((1, 3, 4, 8));
        assert!(ImageTensor::new(a).is_err());
    }

    #[test]
    fn rejects_non_power_of_two() {
        let a = Array4::zeros((1, 3, 6, 6));
        assert!(ImageTensor::new(a).is_err());
    }

    #[test]
    fn photo_range_checked() {
        let mut a = Array4::zeros((1, 3, 4, 4));
        a[[0, 0, 0, 0]] = 1.5;
        assert!(ImageTensor::photo(a).is_err());
    }

    #[test]
    fn one_hot_sum_checked() {
        let mut a = Array4::zeros((1, 2, 4, 4));
        a.index_axis_mut(ndarray::Axis(1), 0).fill(1.0);
        assert!(ImageTensor::one_hot(a.clone()).is_ok());
        a[[0, 1, 0, 0]] = 1.0; // pixel now sums to 2
        assert!(ImageTensor::one_hot(a).is_err());
    }
}
