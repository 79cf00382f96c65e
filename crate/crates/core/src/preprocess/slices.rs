use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// One axial slice, row-major (`pixels[y * width + x]`), intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub pixels: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub slice_index: usize,
    pub parent_id: String,
}

impl SliceImage {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidVolume(format!(
                "slice {}x{} smaller than 8x8",
                self.width, self.height
            )));
        }
        if self.pixels.len() != self.width * self.height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for {}x{}",
                self.pixels.len(),
                self.width,
                self.height
            )));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::OutOfRangeValue(format!("slice pixel {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Wraps the slice as a one-slice volume for NIfTI storage.
    pub fn to_volume(&self, spacing: [f64; 2]) -> Volume {
        Volume {
            data: self.pixels.clone(),
            shape: [self.width, self.height, 1],
            spacing: [spacing[0], spacing[1], 1.0],
            direction: crate::volume::IDENTITY_DIRECTION,
            origin: [0.0; 3],
            source_id: self.parent_id.clone(),
        }
    }

    pub fn from_volume(vol: &Volume, slice_index: usize) -> Result<Self> {
        if vol.shape[2] != 1 {
            return Err(Error::ShapeMismatch(format!("expected a single slice, got {:?}", vol.shape)));
        }
        let s = SliceImage {
            pixels: vol.data.clone(),
            width: vol.shape[0],
            height: vol.shape[1],
            slice_index,
            parent_id: vol.source_id.clone(),
        };
        s.validate()?;
        Ok(s)
    }
}

/// Splits a normalized volume into its axial slices, in index order.
pub fn extract_axial_slices(vol: &Volume) -> Result<Vec<SliceImage>> {
    let [nx, ny, nz] = vol.shape;
    let plane = nx * ny;
    (0..nz)
        .map(|k| {
            let s = SliceImage {
                pixels: vol.data[k * plane..(k + 1) * plane].to_vec(),
                width: nx,
                height: ny,
                slice_index: k,
                parent_id: vol.source_id.clone(),
            };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

/// Inverse of [`extract_axial_slices`].
pub fn stack_slices(slices: &[SliceImage], spacing: [f64; 3]) -> Result<Volume> {
    let first = slices
        .first()
        .ok_or_else(|| Error::EmptyDataset("no slices to stack".into()))?;
    let mut data = Vec::with_capacity(first.pixels.len() * slices.len());
    for s in slices {
        if s.width != first.width || s.height != first.height {
            return Err(Error::ShapeMismatch("slices differ in size".into()));
        }
        data.extend_from_slice(&s.pixels);
    }
    Volume::new(data, [first.width, first.height, slices.len()], spacing)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(pixels: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    if width == out_w && height == out_h {
        return pixels.to_vec();
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|k| {
                let u = ((k as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = u.floor() as usize;
                (i0, (i0 + 1).min(n_in - 1), u - i0 as f64)
            })
            .collect()
    };
    let tx = taps(width, out_w);
    let ty = taps(height, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            let a = pixels[y0 * width + x0];
            let b = pixels[y0 * width + x1];
            let c = pixels[y1 * width + x0];
            let d = pixels[y1 * width + x1];
            let top = a + fx * (b - a);
            let bottom = c + fx * (d - c);
            out.push(top + fy * (bottom - top));
        }
    }
    out
}

/// Writes an 8-bit binary PGM for quick inspection.
pub fn write_pgm(slice: &SliceImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P5\n{} {}\n255\n", slice.width, slice.height).into_bytes();
    buf.extend(slice.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graded(shape: [usize; 3]) -> Volume {
        let n: usize = shape.iter().product();
        Volume::new((0..n).map(|i| i as f64 / n as f64).collect(), shape, [1.0; 3]).unwrap()
    }

    #[test]
    fn slice_count_and_content() {
        let vol = graded([64, 64, 40]);
        let slices = extract_axial_slices(&vol).unwrap();
        assert_eq!(slices.len(), 40);
        assert!(slices.iter().all(|s| s.width == 64 && s.height == 64));
        let k = 17;
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(slices[k].pixels[y * 64 + x], vol.get(x, y, k));
            }
        }
        assert_eq!(stack_slices(&slices, vol.spacing).unwrap(), vol);
    }

    #[test]
    fn out_of_range_slice_rejected() {
        let mut vol = graded([8, 8, 2]);
        vol.data[0] = 1.5;
        assert!(extract_axial_slices(&vol).is_err());
        assert!(extract_axial_slices(&graded([4, 8, 2])).is_err());
    }

    #[test]
    fn bilinear_preserves_constant_and_linear() {
        let w = 12;
        let h = 9;
        let px: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
        let out = resize_bilinear(&px, w, h, 6, 3);
        // downsampling by 2 samples between source columns 2k and 2k+1
        for y in 0..3 {
            for x in 0..6 {
                assert!((out[y * 6 + x] - (2.0 * x as f64 + 0.5)).abs() < 1e-12);
            }
        }
        assert_eq!(resize_bilinear(&px, w, h, w, h), px);
    }
}
