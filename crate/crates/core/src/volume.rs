//! In-memory scalar volume shared by the readers, preprocessing and the phantom generator.

use crate::error::{Error, Result};

/// A 3-D scalar image. Voxels are stored x-fastest: `index = x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Vec<f64>,
    pub shape: [usize; 3],
    /// Millimetres per voxel along each axis.
    pub spacing: [f64; 3],
    /// Direction cosines; `direction[k]` is the unit vector of voxel axis k.
    pub direction: [[f64; 3]; 3],
    /// World position (mm) of voxel (0, 0, 0).
    pub origin: [f64; 3],
    pub source_id: String,
}

pub const IDENTITY_DIRECTION: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Volume {
    pub fn new(data: Vec<f64>, shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let vol = Volume {
            data,
            shape,
            spacing,
            direction: IDENTITY_DIRECTION,
            origin: [0.0; 3],
            source_id: String::new(),
        };
        vol.validate()?;
        Ok(vol)
    }

    pub fn zeros(shape: [usize; 3], spacing: [f64; 3]) -> Self {
        Volume {
            data: vec![0.0; shape.iter().product()],
            shape,
            spacing,
            direction: IDENTITY_DIRECTION,
            origin: [0.0; 3],
            source_id: String::new(),
        }
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Checks shape, spacing, finiteness and direction-cosine norms.
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidVolume(format!("zero-sized axis in {:?}", self.shape)));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidVolume(format!("bad spacing {:?}", self.spacing)));
        }
        let expected: usize = self.shape.iter().product();
        if self.data.len() != expected {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match shape {:?}",
                self.data.len(),
                self.shape
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVoxel { index });
        }
        for axis in &self.direction {
            let norm = axis.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(Error::InvalidVolume(format!("direction column norm {norm}")));
            }
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_bad_geometry() {
        assert!(Volume::new(vec![0.0; 8], [2, 2, 2], [1.0, 1.0, 1.0]).is_ok());
        assert!(Volume::new(vec![0.0; 7], [2, 2, 2], [1.0, 1.0, 1.0]).is_err());
        assert!(Volume::new(vec![], [0, 2, 2], [1.0, 1.0, 1.0]).is_err());
        assert!(Volume::new(vec![0.0; 8], [2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        let err = Volume::new(vec![0.0, f64::NAN, 0.0, 0.0], [2, 2, 1], [1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteVoxel { index: 1 }));
    }

    #[test]
    fn x_is_fastest_axis() {
        let mut v = Volume::zeros([3, 4, 5], [1.0; 3]);
        v.set(2, 1, 3, 7.0);
        assert_eq!(v.data[2 + 3 * (1 + 4 * 3)], 7.0);
    }
}
