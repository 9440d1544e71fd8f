use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A square `D x D` scalar grid stored row-major.
///
/// Row index `i` runs along `y`, column index `j` along `x`; grid node
/// `(i, j)` sits at `(x, y) = (j h, i h)` with `h = 1 / (D - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    resolution: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(resolution: usize, values: Vec<f64>) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::param("field resolution must be positive"));
        }
        if values.len() != resolution * resolution {
            return Err(Error::param(format!(
                "field of resolution {resolution} needs {} values, got {}",
                resolution * resolution,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at cell ({}, {})",
                pos / resolution,
                pos % resolution
            )));
        }
        Ok(Self { resolution, values })
    }

    pub fn zeros(resolution: usize) -> Self {
        Self {
            resolution,
            values: vec![0.0; resolution * resolution],
        }
    }

    pub fn from_fn(resolution: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(resolution * resolution);
        for i in 0..resolution {
            for j in 0..resolution {
                values.push(f(i, j));
            }
        }
        Self { resolution, values }
    }

    /// Samples `f(x, y)` on the unit-square grid with spacing `1 / (D - 1)`.
    pub fn from_unit_square(resolution: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = grid_spacing(resolution);
        Self::from_fn(resolution, |i, j| f(j as f64 * h, i as f64 * h))
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.resolution + col] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Largest absolute value on the outer ring of cells.
    pub fn boundary_max_abs(&self) -> f64 {
        let n = self.resolution;
        let mut m = 0.0f64;
        for k in 0..n {
            m = m
                .max(self.get(0, k).abs())
                .max(self.get(n - 1, k).abs())
                .max(self.get(k, 0).abs())
                .max(self.get(k, n - 1).abs());
        }
        m
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn check_resolution(&self, expected: usize) -> Result<()> {
        if self.resolution != expected {
            return Err(Error::Geometry {
                expected,
                actual: self.resolution,
            });
        }
        Ok(())
    }
}

/// Grid spacing of a `D`-node unit interval including both end points.
pub fn grid_spacing(resolution: usize) -> f64 {
    1.0 / (resolution as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(Field::new(3, vec![0.0; 8]).is_err());
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(matches!(Field::new(3, v), Err(Error::Numeric(_))));
    }

    #[test]
    fn unit_square_sampling_hits_corners() {
        let f = Field::from_unit_square(5, |x, y| x + 10.0 * y);
        assert_eq!(f.get(0, 0), 0.0);
        assert_eq!(f.get(0, 4), 1.0);
        assert_eq!(f.get(4, 0), 10.0);
        assert_eq!(f.boundary_max_abs(), 11.0);
    }
}
