use crate::error::{Error, Result};
use crate::volume::Volume;

/// Linear interpolation weights for resampling one axis of length `n_in`.
///
/// Output sample `k` sits at `(k + 0.5) * target - spacing / 2` mm from the first input
/// voxel centre, so both grids share their outer edge. Positions beyond the outer
/// voxel centres clamp to the edge voxel.
fn axis_taps(n_in: usize, spacing: f64, target: f64, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|k| {
            let u = (((k as f64 + 0.5) * target - 0.5 * spacing) / spacing).clamp(0.0, (n_in - 1) as f64);
            let i0 = u.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, u - i0 as f64)
        })
        .collect()
}

/// Resamples along one axis of a dense x-fastest buffer.
fn resample_axis(data: &[f64], shape: [usize; 3], axis: usize, taps: &[(usize, usize, f64)]) -> (Vec<f64>, [usize; 3]) {
    let mut out_shape = shape;
    out_shape[axis] = taps.len();
    let stride_in = match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    };
    let mut out = vec![0.0; out_shape.iter().product()];
    for z in 0..out_shape[2] {
        for y in 0..out_shape[1] {
            for x in 0..out_shape[0] {
                let mut pos = [x, y, z];
                let (i0, i1, t) = taps[pos[axis]];
                pos[axis] = 0;
                let base = pos[0] + shape[0] * (pos[1] + shape[1] * pos[2]);
                let a = data[base + i0 * stride_in];
                let b = data[base + i1 * stride_in];
                let obase = x + out_shape[0] * (y + out_shape[1] * z);
                out[obase] = if t == 0.0 { a } else { a + t * (b - a) };
            }
        }
    }
    (out, out_shape)
}

/// Trilinear resampling onto a grid with the given spacing.
pub fn resample_isotropic(vol: &Volume, target: [f64; 3]) -> Result<Volume> {
    vol.validate()?;
    if target.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidConfig(format!("target spacing {target:?}")));
    }
    if vol.spacing == target {
        return Ok(vol.clone());
    }
    let raw: Vec<f64> = (0..3)
        .map(|i| (vol.shape[i] as f64 * vol.spacing[i] / target[i]).round())
        .collect();
    if raw.iter().all(|&r| r < 1.0) {
        return Err(Error::DegenerateOutput {
            shape: vol.shape,
            spacing: vol.spacing,
            target,
        });
    }
    let out_shape = [0, 1, 2].map(|i| (raw[i] as usize).max(1));

    let mut data = vol.data.clone();
    let mut shape = vol.shape;
    for axis in 0..3 {
        let taps = axis_taps(vol.shape[axis], vol.spacing[axis], target[axis], out_shape[axis]);
        let (d, s) = resample_axis(&data, shape, axis, &taps);
        data = d;
        shape = s;
    }
    // the first output centre moves by (target - spacing) / 2 along each axis
    let mut origin = vol.origin;
    for axis in 0..3 {
        let shift = 0.5 * (target[axis] - vol.spacing[axis]);
        for r in 0..3 {
            origin[r] += vol.direction[axis][r] * shift;
        }
    }
    Ok(Volume {
        data,
        shape,
        spacing: target,
        direction: vol.direction,
        origin,
        source_id: vol.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(shape: [usize; 3], spacing: [f64; 3], f: impl Fn(f64, f64, f64) -> f64) -> Volume {
        let mut v = Volume::zeros(shape, spacing);
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    let val = f(x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]);
                    v.set(x, y, z, val);
                }
            }
        }
        v
    }

    #[test]
    fn identity_spacing_is_a_copy() {
        let v = field([5, 6, 7], [1.0; 3], |x, y, z| x * y - z);
        let out = resample_isotropic(&v, [1.0; 3]).unwrap();
        assert_eq!(out.shape, v.shape);
        for (a, b) in out.data.iter().zip(&v.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn half_mm_cube_halves() {
        let v = Volume::zeros([64, 64, 64], [0.5; 3]);
        assert_eq!(resample_isotropic(&v, [1.0; 3]).unwrap().shape, [32, 32, 32]);
    }

    #[test]
    fn linear_field_reproduced_at_interior_samples() {
        let spacing = [0.7, 1.3, 2.5];
        let v = field([30, 20, 12], spacing, |x, y, z| 2.0 * x - 0.5 * y + 0.25 * z + 3.0);
        let out = resample_isotropic(&v, [1.0; 3]).unwrap();
        for z in 0..out.shape[2] {
            for y in 0..out.shape[1] {
                for x in 0..out.shape[0] {
                    let px = (x as f64 + 0.5) - 0.5 * spacing[0];
                    let py = (y as f64 + 0.5) - 0.5 * spacing[1];
                    let pz = (z as f64 + 0.5) - 0.5 * spacing[2];
                    let inside = [(px, 0), (py, 1), (pz, 2)]
                        .iter()
                        .all(|&(p, a)| p >= 0.0 && p <= (v.shape[a] - 1) as f64 * spacing[a]);
                    if inside {
                        let expect = 2.0 * px - 0.5 * py + 0.25 * pz + 3.0;
                        assert!((out.get(x, y, z) - expect).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_output_reported() {
        let v = Volume::zeros([1, 1, 1], [0.2; 3]);
        assert!(matches!(resample_isotropic(&v, [1.0; 3]), Err(Error::DegenerateOutput { .. })));
        // a single degenerate axis clamps to 1
        let v = Volume::zeros([10, 10, 1], [1.0, 1.0, 0.2]);
        assert_eq!(resample_isotropic(&v, [1.0; 3]).unwrap().shape, [10, 10, 1]);
    }

    proptest! {
        #[test]
        fn range_conserved_and_idempotent(
            nx in 2usize..9, ny in 2usize..9, nz in 2usize..9,
            sx in 0.4f64..2.5, sy in 0.4f64..2.5, sz in 0.4f64..2.5,
            seed in 0u64..1000,
        ) {
            let n = nx * ny * nz;
            let data: Vec<f64> = (0..n).map(|i| (((i as u64 + 1) * (seed + 7919)) % 1009) as f64 - 500.0).collect();
            let v = Volume::new(data, [nx, ny, nz], [sx, sy, sz]).unwrap();
            let once = resample_isotropic(&v, [1.0; 3]).unwrap();
            let (lo, hi) = v.min_max();
            let (olo, ohi) = once.min_max();
            prop_assert!(olo >= lo - 1e-9 && ohi <= hi + 1e-9);
            let twice = resample_isotropic(&once, [1.0; 3]).unwrap();
            prop_assert_eq!(once.shape, twice.shape);
            for (a, b) in once.data.iter().zip(&twice.data) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
