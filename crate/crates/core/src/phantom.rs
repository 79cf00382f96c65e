//! Synthetic abdominal volumes with ellipsoidal kidneys and Rician magnitude noise.
//!
//! The body is an elliptic cylinder at the background level surrounded by air (zero signal),
//! so the air region of a noisy volume is pure Rayleigh noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotations::DatasetManifest;
use crate::dataset::{build_dataset, BuildOptions, RawSeries};
use crate::error::{Error, Result};
use crate::volume::Volume;
use crate::volume_io::{write_nifti, NiftiDatatype};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidneySpec {
    /// Centre in voxel coordinates.
    pub center: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    pub contrast: f64,
}

impl KidneySpec {
    fn semi_axes_vox(&self, spacing: [f64; 3]) -> [f64; 3] {
        [
            self.semi_axes_mm[0] / spacing[0],
            self.semi_axes_mm[1] / spacing[1],
            self.semi_axes_mm[2] / spacing[2],
        ]
    }

    /// `sum(((x_i - c_i) / a_i)^2) <= 1` in voxel units.
    pub fn contains(&self, voxel: [usize; 3], spacing: [f64; 3]) -> bool {
        let a = self.semi_axes_vox(spacing);
        (0..3)
            .map(|i| ((voxel[i] as f64 - self.center[i]) / a[i]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub patient_id: String,
    pub study_id: String,
    pub volume_shape: [usize; 3],
    pub spacing: [f64; 3],
    pub kidneys: Vec<KidneySpec>,
    pub background: f64,
    /// Noise standard deviation as a fraction of the largest kidney contrast.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            patient_id: "P001".into(),
            study_id: "S1".into(),
            volume_shape: [96, 96, 48],
            spacing: [1.0, 1.0, 1.0],
            kidneys: Vec::new(),
            background: 0.1,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// One or two kidneys placed left and right of the midline with seeded jitter. Both kidneys
    /// of a phantom share one contrast level up to a 5% perturbation.
    pub fn random(patient_id: &str, study_id: &str, volume_shape: [usize; 3], noise_sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [nx, ny, nz] = volume_shape.map(|n| n as f64);
        let count = if rng.random_bool(0.85) { 2 } else { 1 };
        let first_side = rng.random_range(0..2);
        let patient_contrast: f64 = rng.random_range(0.3..0.8);
        let kidneys = (0..count)
            .map(|k| {
                let side = if (first_side + k) % 2 == 0 { 0.3 } else { 0.7 };
                let semi_axes_mm = [
                    rng.random_range(6.0..(0.13 * nx).max(6.5)),
                    rng.random_range(8.0..(0.17 * ny).max(8.5)),
                    rng.random_range(10.0..(0.375 * nz).clamp(10.5, 18.0)),
                ];
                let center = [
                    (side * nx + rng.random_range(-0.03..0.03) * nx).round(),
                    (0.5 * ny + rng.random_range(-0.05..0.05) * ny).round(),
                    (0.5 * nz + rng.random_range(-0.06..0.06) * nz).round(),
                ];
                KidneySpec {
                    center,
                    semi_axes_mm,
                    contrast: (patient_contrast * rng.random_range(0.95..1.05)).clamp(0.3, 0.8),
                }
            })
            .collect();
        PhantomSpec {
            patient_id: patient_id.into(),
            study_id: study_id.into(),
            volume_shape,
            kidneys,
            noise_sigma,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.volume_shape.iter().any(|&n| n < 8) {
            return Err(Error::InvalidConfig(format!("phantom shape {:?} below 8 voxels", self.volume_shape)));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidConfig(format!("phantom spacing {:?}", self.spacing)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise_sigma {}", self.noise_sigma)));
        }
        if !(self.background.is_finite() && self.background >= 0.0) {
            return Err(Error::InvalidConfig(format!("background {}", self.background)));
        }
        if self.kidneys.is_empty() || self.kidneys.len() > 2 {
            return Err(Error::InvalidConfig(format!("{} kidneys, expected 1 or 2", self.kidneys.len())));
        }
        for k in &self.kidneys {
            if k.semi_axes_mm.iter().any(|&a| !(a.is_finite() && a > 0.0)) || !(k.contrast.is_finite() && k.contrast > 0.0) {
                return Err(Error::InvalidConfig(format!("kidney {k:?}")));
            }
            let a = k.semi_axes_vox(self.spacing);
            for i in 0..3 {
                if k.center[i] - a[i] < 0.0 || k.center[i] + a[i] > (self.volume_shape[i] - 1) as f64 {
                    return Err(Error::EllipsoidOutOfBounds(format!(
                        "axis {i}: centre {} semi-axis {} voxels in extent {}",
                        k.center[i], a[i], self.volume_shape[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn max_contrast(&self) -> f64 {
        self.kidneys.iter().map(|k| k.contrast).fold(0.0, f64::max)
    }

    /// Absolute noise standard deviation.
    pub fn sigma(&self) -> f64 {
        self.noise_sigma * self.max_contrast()
    }

    fn in_body(&self, x: usize, y: usize) -> bool {
        let [nx, ny, _] = self.volume_shape.map(|n| n as f64);
        let dx = (x as f64 - 0.5 * (nx - 1.0)) / (0.46 * nx);
        let dy = (y as f64 - 0.5 * (ny - 1.0)) / (0.40 * ny);
        dx * dx + dy * dy <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub clean: Volume,
    pub image: Volume,
    /// Unsmoothed kidney indicator.
    pub mask: Volume,
}

/// `[1/4, 1/2, 1/4]` along one axis, edges clamped.
fn smooth_axis(data: &[f64], shape: [usize; 3], axis: usize) -> Vec<f64> {
    let stride = [1, shape[0], shape[0] * shape[1]][axis];
    let n = shape[axis];
    let mut out = vec![0.0; data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = (idx / stride) % n;
        let prev = if pos == 0 { idx } else { idx - stride };
        let next = if pos + 1 == n { idx } else { idx + stride };
        *o = 0.25 * data[prev] + 0.5 * data[idx] + 0.25 * data[next];
    }
    out
}

pub fn generate(spec: &PhantomSpec) -> Result<PhantomCase> {
    spec.validate()?;
    let shape = spec.volume_shape;
    let [nx, ny, nz] = shape;
    let mut mask = Volume::zeros(shape, spec.spacing);
    let mut kidney: Vec<f64> = vec![0.0; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = mask.index(x, y, z);
                for k in &spec.kidneys {
                    if k.contains([x, y, z], spec.spacing) {
                        mask.data[idx] = 1.0;
                        kidney[idx] = kidney[idx].max(k.contrast);
                    }
                }
            }
        }
    }
    for axis in 0..3 {
        kidney = smooth_axis(&kidney, shape, axis);
    }
    let mut clean = Volume::zeros(shape, spec.spacing);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = clean.index(x, y, z);
                let base = if spec.in_body(x, y) { spec.background } else { 0.0 };
                clean.data[idx] = base + kidney[idx];
            }
        }
    }
    let sigma = spec.sigma();
    let mut image = clean.clone();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_0000_0000_0001);
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for v in &mut image.data {
            let re = *v + normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v = re.hypot(im);
        }
    }
    let id = format!("{}__{}", spec.patient_id, spec.study_id);
    Ok(PhantomCase {
        clean: clean.with_source_id(format!("{id}/clean")),
        image: image.with_source_id(id.clone()),
        mask: mask.with_source_id(format!("{id}/mask")),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_patients: usize,
    /// Fraction of patients whose scans carry no segmentation.
    pub unannotated_fraction: f64,
    /// Fraction of annotated patients given a second, unsegmented study.
    pub linked_study_fraction: f64,
    pub volume_shape: [usize; 3],
    pub noise_sigma: f64,
    pub seed: u64,
    pub build: BuildOptions,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_patients: 25,
            unannotated_fraction: 0.3,
            linked_study_fraction: 0.2,
            volume_shape: [96, 96, 48],
            noise_sigma: 0.1,
            seed: 0,
            build: BuildOptions::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 5 {
            return Err(Error::TooFewPatients(self.n_patients));
        }
        for (name, f) in [
            ("unannotated_fraction", self.unannotated_fraction),
            ("linked_study_fraction", self.linked_study_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("{name} {f} outside [0, 1)")));
            }
        }
        self.build.validate()
    }

    /// Phantom specs for every series, plus which ones carry masks.
    pub fn plan(&self) -> Vec<(PhantomSpec, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let ids: Vec<String> = (1..=self.n_patients).map(|k| format!("P{k:03}")).collect();
        let mut order: Vec<usize> = (0..self.n_patients).collect();
        order.shuffle(&mut rng);
        let n_unannotated = (self.n_patients as f64 * self.unannotated_fraction).round() as usize;
        let unannotated: Vec<usize> = order[..n_unannotated].to_vec();
        let annotated: Vec<usize> = order[n_unannotated..].to_vec();
        let n_linked = (annotated.len() as f64 * self.linked_study_fraction).round() as usize;
        let linked = &annotated[..n_linked];
        let mut out = Vec::new();
        for (k, id) in ids.iter().enumerate() {
            let series_seed = |study: u64| self.seed.wrapping_mul(1_000_003).wrapping_add(1000 * k as u64 + study);
            out.push((
                PhantomSpec::random(id, "S1", self.volume_shape, self.noise_sigma, series_seed(1)),
                !unannotated.contains(&k),
            ));
            if linked.contains(&k) {
                out.push((PhantomSpec::random(id, "S2", self.volume_shape, self.noise_sigma, series_seed(2)), false));
            }
        }
        out
    }
}

/// Writes raw volumes under `root/raw` and builds the processed dataset in `root`.
pub fn generate_corpus(spec: &CorpusSpec, root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let raw_dir = root.join("raw");
    let mut raw = Vec::new();
    for (phantom, annotated) in spec.plan() {
        let case = generate(&phantom)?;
        let stem = format!("{}__{}", phantom.patient_id, phantom.study_id);
        let volume_path = raw_dir.join("volumes").join(format!("{stem}.nii.gz"));
        write_nifti(&case.image, &volume_path, NiftiDatatype::Float32)?;
        let mask_path = if annotated {
            let p = raw_dir.join("masks").join(format!("{stem}.nii.gz"));
            write_nifti(&case.mask, &p, NiftiDatatype::Uint8)?;
            Some(p)
        } else {
            None
        };
        raw.push(RawSeries {
            patient_id: phantom.patient_id.clone(),
            study_id: phantom.study_id.clone(),
            volume_path,
            mask_path,
        });
    }
    build_dataset(&raw, root, &spec.build)
}

/// Kolmogorov-Smirnov distance between `samples` and Rayleigh(`sigma`).
pub fn rayleigh_ks_statistic(samples: &[f64], sigma: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-x * x / (2.0 * sigma * sigma)).exp();
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sided KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::mask_to_boxes;

    fn single(center: [f64; 3], semi: [f64; 3]) -> PhantomSpec {
        PhantomSpec {
            volume_shape: [96, 96, 48],
            kidneys: vec![KidneySpec {
                center,
                semi_axes_mm: semi,
                contrast: 0.5,
            }],
            ..Default::default()
        }
    }

    fn axial(vol: &Volume, z: usize) -> Vec<f64> {
        let n = vol.shape[0] * vol.shape[1];
        vol.data[z * n..(z + 1) * n].to_vec()
    }

    #[test]
    fn central_slice_extent() {
        let spec = single([32.0, 32.0, 24.0], [10.0, 6.0, 8.0]);
        let case = generate(&spec).unwrap();
        let m = axial(&case.mask, 24);
        let (mut xs, mut ys) = (vec![], vec![]);
        for y in 0..96 {
            for x in 0..96 {
                if m[y * 96 + x] == 1.0 {
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
        assert_eq!((*xs.iter().min().unwrap(), *xs.iter().max().unwrap()), (22, 42));
        assert_eq!((*ys.iter().min().unwrap(), *ys.iter().max().unwrap()), (26, 38));
        let boxes = mask_to_boxes(&m, 96, 96, 16).unwrap();
        assert_eq!(boxes.len(), 1);
        assert!((boxes[0].w - 21.0 / 96.0).abs() < 1e-12);
        assert!((boxes[0].h - 13.0 / 96.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_is_clean() {
        let mut spec = single([32.0, 48.0, 24.0], [8.0, 8.0, 8.0]);
        spec.noise_sigma = 0.0;
        let case = generate(&spec).unwrap();
        assert_eq!(case.image.data, case.clean.data);
    }

    #[test]
    fn two_kidneys_two_boxes() {
        let mut spec = single([28.0, 48.0, 24.0], [8.0, 12.0, 12.0]);
        spec.kidneys.push(KidneySpec {
            center: [68.0, 48.0, 24.0],
            semi_axes_mm: [8.0, 12.0, 12.0],
            contrast: 0.6,
        });
        let case = generate(&spec).unwrap();
        for z in [20, 24, 30] {
            assert_eq!(mask_to_boxes(&axial(&case.mask, z), 96, 96, 16).unwrap().len(), 2);
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let spec = single([5.0, 48.0, 24.0], [8.0, 8.0, 8.0]);
        assert!(matches!(generate(&spec), Err(Error::EllipsoidOutOfBounds(_))));
    }

    #[test]
    fn clean_range() {
        let spec = PhantomSpec::random("P1", "S1", [96, 96, 48], 0.1, 4);
        let case = generate(&spec).unwrap();
        let (lo, hi) = case.clean.min_max();
        assert!(lo >= 0.0 && hi <= spec.background + spec.max_contrast() + 1e-12);
    }

    #[test]
    fn random_specs_valid() {
        for seed in 0..200 {
            PhantomSpec::random("P", "S", [96, 96, 48], 0.1, seed).validate().unwrap();
            PhantomSpec::random("P", "S", [64, 64, 32], 0.1, seed).validate().unwrap();
        }
    }

    #[test]
    fn air_is_rayleigh() {
        let spec = PhantomSpec::random("P1", "S1", [96, 96, 48], 0.1, 8);
        let case = generate(&spec).unwrap();
        let air: Vec<f64> = case
            .clean
            .data
            .iter()
            .zip(&case.image.data)
            .filter(|(c, _)| **c == 0.0)
            .map(|(_, v)| *v)
            .collect();
        assert!(air.len() > 50_000);
        let d = rayleigh_ks_statistic(&air, spec.sigma());
        assert!(d < ks_critical_1pct(air.len()), "D = {d}");
        // a 10% wrong sigma is rejected at this sample size
        assert!(rayleigh_ks_statistic(&air, 1.1 * spec.sigma()) > ks_critical_1pct(air.len()));
    }

    #[test]
    fn ks_oracle_on_uniform_quantiles() {
        // exact Rayleigh quantiles at (i + 0.5) / n give D = 0.5 / n
        let n = 1000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                (-2.0 * (1.0 - u).ln()).sqrt()
            })
            .collect();
        assert!((rayleigh_ks_statistic(&samples, 1.0) - 0.5 / n as f64).abs() < 1e-12);
    }
}
