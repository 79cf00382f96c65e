//! On-disk dataset layout: raw volumes and masks in, slice images, labels and a manifest out.
//!
//! ```text
//! <root>/manifest.jsonl
//! <root>/series/<patient>__<study>/slice_000.nii ...   2-D float32 slices in [0, 1]
//! <root>/series/<patient>__<study>/preprocess.json     applied preprocessing
//! <root>/labels/<patient>__<study>/slice_000.txt ...   human boxes
//! <root>/pseudo/<patient>__<study>/slice_000.txt ...   model boxes with confidence
//! ```
//!
//! Slice files are numbered by position within the series, which is also the index used by
//! [`ManifestEntry::empty_slices`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotations::{
    mask_to_boxes, read_detections, read_labels, write_labels, AnnotationSource, BoxLabel, DatasetManifest, ManifestEntry,
};
use crate::detector::TrainSample;
use crate::error::{Error, Result};
use crate::preprocess::{preprocess_volume, resample_isotropic, resize_bilinear, PreprocessOptions, PreprocessRecord, SliceImage};
use crate::volume::Volume;
use crate::volume_io::{read_nifti, read_volume, write_nifti, NiftiDatatype};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub preprocess: PreprocessOptions,
    /// Evenly spaced slices kept per series; `None` keeps every slice in the band.
    pub slices_per_series: Option<usize>,
    /// Fractional z range `[lo, hi]` the kept slices are drawn from.
    pub slice_band: [f64; 2],
    pub min_area_px: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            preprocess: PreprocessOptions::default(),
            slices_per_series: None,
            slice_band: [0.0, 1.0],
            min_area_px: 16,
        }
    }
}

impl BuildOptions {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.slice_band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidConfig(format!("slice_band {:?}", self.slice_band)));
        }
        if self.slices_per_series == Some(0) {
            return Err(Error::InvalidConfig("slices_per_series must be at least 1".into()));
        }
        if self.min_area_px == 0 {
            return Err(Error::InvalidConfig("min_area_px must be at least 1".into()));
        }
        self.preprocess.normalization.validate()
    }
}

/// One input series and its optional segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub patient_id: String,
    pub study_id: String,
    pub volume_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

impl RawSeries {
    pub fn name(&self) -> String {
        format!("{}__{}", self.patient_id, self.study_id)
    }
}

fn strip_nifti_ext(name: &str) -> Option<&str> {
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii"))
}

/// Finds `<raw>/volumes/<patient>__<study>.nii[.gz]` (or DICOM directories of that name)
/// paired with `<raw>/masks/<same name>.nii[.gz]` when present. A name without `__` is a
/// patient with study `S1`.
pub fn discover_raw(raw_root: &Path) -> Result<Vec<RawSeries>> {
    let vol_dir = raw_root.join("volumes");
    let mask_dir = raw_root.join("masks");
    let listing = std::fs::read_dir(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut out = Vec::new();
    for item in listing {
        let item = item.map_err(|e| Error::io(&vol_dir, e))?;
        let path = item.path();
        let file_name = item.file_name().to_string_lossy().into_owned();
        let stem = if path.is_dir() {
            file_name.clone()
        } else {
            match strip_nifti_ext(&file_name) {
                Some(s) => s.to_string(),
                None => continue,
            }
        };
        let (patient_id, study_id) = match stem.split_once("__") {
            Some((p, s)) => (p.to_string(), s.to_string()),
            None => (stem.clone(), "S1".to_string()),
        };
        let mask_path = [".nii.gz", ".nii"]
            .iter()
            .map(|ext| mask_dir.join(format!("{stem}{ext}")))
            .find(|p| p.is_file());
        out.push(RawSeries {
            patient_id,
            study_id,
            volume_path: path,
            mask_path,
        });
    }
    out.sort_by(|a, b| (&a.patient_id, &a.study_id).cmp(&(&b.patient_id, &b.study_id)));
    Ok(out)
}

/// `count` evenly spaced indices across `band` of `0..nz`, de-duplicated.
pub fn slice_indices(nz: usize, count: Option<usize>, band: [f64; 2]) -> Vec<usize> {
    let lo = ((band[0] * nz as f64).floor() as usize).min(nz - 1);
    let hi = ((band[1] * nz as f64).ceil() as usize).clamp(lo + 1, nz);
    let span = hi - lo;
    let mut out: Vec<usize> = match count {
        None => (lo..hi).collect(),
        Some(c) if c >= span => (lo..hi).collect(),
        Some(c) => (0..c).map(|k| lo + ((k as f64 + 0.5) * span as f64 / c as f64).floor() as usize).collect(),
    };
    out.dedup();
    out
}

/// Resamples a binary mask with the volume's geometry step and re-binarizes at 0.5.
fn prepare_mask(mask: &Volume, opts: &PreprocessOptions) -> Result<Volume> {
    let mut m = match opts.target_spacing {
        Some(t) => resample_isotropic(mask, t)?,
        None => mask.clone(),
    };
    for v in &mut m.data {
        *v = if *v >= 0.5 { 1.0 } else { 0.0 };
    }
    Ok(m)
}

fn axial_plane(vol: &Volume, z: usize) -> &[f64] {
    let n = vol.shape[0] * vol.shape[1];
    &vol.data[z * n..(z + 1) * n]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeriesSidecar {
    preprocess: PreprocessRecord,
    /// Source z index of each stored slice.
    z_indices: Vec<usize>,
}

pub fn slice_file_name(k: usize, ext: &str) -> String {
    format!("slice_{k:03}.{ext}")
}

/// Series directory name, the last component of `series_path`.
pub fn series_name(entry: &ManifestEntry) -> &str {
    entry.series_path.rsplit('/').next().unwrap_or(&entry.series_path)
}

pub fn slice_path(root: &Path, entry: &ManifestEntry, k: usize) -> PathBuf {
    root.join(&entry.series_path).join(slice_file_name(k, "nii"))
}

pub fn label_dir(root: &Path, entry: &ManifestEntry, source: AnnotationSource) -> PathBuf {
    let base = match source {
        AnnotationSource::Pseudo => "pseudo",
        _ => "labels",
    };
    root.join(base).join(series_name(entry))
}

pub fn label_path(root: &Path, entry: &ManifestEntry, source: AnnotationSource, k: usize) -> PathBuf {
    label_dir(root, entry, source).join(slice_file_name(k, "txt"))
}

/// Preprocesses every raw series, stores the selected slices and their mask-derived labels,
/// and writes the manifest.
pub fn build_dataset(raw: &[RawSeries], root: &Path, opts: &BuildOptions) -> Result<DatasetManifest> {
    opts.validate()?;
    let mut entries = Vec::with_capacity(raw.len());
    for series in raw {
        let name = series.name();
        let volume = read_volume(&series.volume_path)?.with_source_id(name.clone());
        let (processed, record) = preprocess_volume(&volume, &opts.preprocess)?;
        let mask = match &series.mask_path {
            Some(p) => {
                let m = prepare_mask(&read_nifti(p)?, &opts.preprocess)?;
                if m.shape != processed.shape {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: mask shape {:?} differs from volume {:?}",
                        m.shape, processed.shape
                    )));
                }
                Some(m)
            }
            None => None,
        };
        let [nx, ny, nz] = processed.shape;
        let z_indices = slice_indices(nz, opts.slices_per_series, opts.slice_band);
        let source = if mask.is_some() {
            AnnotationSource::Human
        } else {
            AnnotationSource::None
        };
        let mut entry = ManifestEntry::new(&series.patient_id, &series.study_id, &format!("series/{name}"), z_indices.len(), source);
        for (k, &z) in z_indices.iter().enumerate() {
            let slice = SliceImage {
                pixels: axial_plane(&processed, z).to_vec(),
                width: nx,
                height: ny,
                slice_index: z,
                parent_id: name.clone(),
            };
            let vol = slice.to_volume([processed.spacing[0], processed.spacing[1]]);
            write_nifti(&vol, slice_path(root, &entry, k), NiftiDatatype::Float32)?;
            if let Some(m) = &mask {
                let boxes = mask_to_boxes(axial_plane(m, z), nx, ny, opts.min_area_px)?;
                if boxes.is_empty() {
                    entry.empty_slices.push(k);
                }
                write_labels(&boxes, label_path(root, &entry, AnnotationSource::Human, k))?;
            }
        }
        let sidecar = SeriesSidecar {
            preprocess: record,
            z_indices,
        };
        let sidecar_path = root.join(&entry.series_path).join("preprocess.json");
        std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&sidecar_path, e))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.write(root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    DatasetManifest::read(root.join(MANIFEST_FILE))
}

pub fn load_series(root: &Path, entry: &ManifestEntry) -> Result<Vec<SliceImage>> {
    (0..entry.slice_count)
        .map(|k| {
            let vol = read_nifti(slice_path(root, entry, k))?;
            SliceImage::from_volume(&vol, k)
        })
        .collect()
}

/// Boxes for every slice of an annotated series.
pub fn load_targets(root: &Path, entry: &ManifestEntry) -> Result<Vec<Vec<BoxLabel>>> {
    load_targets_with(root, root, entry)
}

/// Like [`load_targets`], with pseudo-labels looked up under `pseudo_root` instead.
pub fn load_targets_with(root: &Path, pseudo_root: &Path, entry: &ManifestEntry) -> Result<Vec<Vec<BoxLabel>>> {
    (0..entry.slice_count)
        .map(|k| match entry.annotation_source {
            AnnotationSource::Human => read_labels(label_path(root, entry, AnnotationSource::Human, k)),
            AnnotationSource::Pseudo => Ok(read_detections(label_path(pseudo_root, entry, AnnotationSource::Pseudo, k))?
                .into_iter()
                .map(|d| d.bbox)
                .collect()),
            AnnotationSource::None => Err(Error::Manifest(format!("{} has no annotations", entry.series_path))),
        })
        .collect()
}

/// Bilinear resize of a slice to the square detector input.
pub fn to_detector_input(slice: &SliceImage, image_size: usize) -> Vec<f64> {
    if slice.width == image_size && slice.height == image_size {
        slice.pixels.clone()
    } else {
        resize_bilinear(&slice.pixels, slice.width, slice.height, image_size, image_size)
    }
}

/// Detector inputs for every slice of a series.
pub fn load_inputs(root: &Path, entry: &ManifestEntry, image_size: usize) -> Result<Vec<Vec<f64>>> {
    Ok(load_series(root, entry)?
        .iter()
        .map(|s| to_detector_input(s, image_size))
        .collect())
}

/// Training samples from annotated entries, optionally dropping box-free slices.
pub fn training_samples(root: &Path, entries: &[&ManifestEntry], image_size: usize, include_empty: bool) -> Result<Vec<TrainSample>> {
    training_samples_with(root, root, entries, image_size, include_empty)
}

pub fn training_samples_with(
    root: &Path,
    pseudo_root: &Path,
    entries: &[&ManifestEntry],
    image_size: usize,
    include_empty: bool,
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for entry in entries {
        let inputs = load_inputs(root, entry, image_size)?;
        let targets = load_targets_with(root, pseudo_root, entry)?;
        for (image, targets) in inputs.into_iter().zip(targets) {
            if include_empty || !targets.is_empty() {
                out.push(TrainSample { image, targets });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_evenly_spaced() {
        assert_eq!(slice_indices(48, Some(4), [0.0, 1.0]), vec![6, 18, 30, 42]);
        assert_eq!(slice_indices(48, None, [0.25, 0.75]), (12..36).collect::<Vec<_>>());
        assert_eq!(slice_indices(48, Some(100), [0.5, 0.6]), (24..29).collect::<Vec<_>>());
        assert_eq!(slice_indices(1, Some(3), [0.0, 1.0]), vec![0]);
    }

    #[test]
    fn options_validation() {
        assert!(BuildOptions::default().validate().is_ok());
        assert!(BuildOptions { slice_band: [0.6, 0.4], ..Default::default() }.validate().is_err());
        assert!(BuildOptions { slices_per_series: Some(0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn discover_pairs_masks() {
        let dir = tempfile::tempdir().unwrap();
        let vols = dir.path().join("volumes");
        let masks = dir.path().join("masks");
        std::fs::create_dir_all(&vols).unwrap();
        std::fs::create_dir_all(&masks).unwrap();
        for name in ["B__S2.nii.gz", "A.nii", "B__S1.nii.gz", "notes.txt"] {
            std::fs::write(vols.join(name), b"").unwrap();
        }
        std::fs::write(masks.join("B__S1.nii.gz"), b"").unwrap();
        let raw = discover_raw(dir.path()).unwrap();
        let names: Vec<String> = raw.iter().map(|r| r.name()).collect();
        assert_eq!(names, vec!["A__S1", "B__S1", "B__S2"]);
        assert!(raw[1].mask_path.is_some() && raw[2].mask_path.is_none());
    }
}
