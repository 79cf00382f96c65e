//! Geometry and intensity preparation: isotropic resampling, Rician normalization, axial slicing.

mod resample;
mod rician;
mod slices;

pub use resample::resample_isotropic;
pub use rician::{estimate_rician_sigma, lower_tail_second_moment, rician_normalize, NormalizationParams};
pub use slices::{extract_axial_slices, resize_bilinear, stack_slices, write_pgm, SliceImage};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// Geometry first, then intensity.
    #[default]
    ResampleThenNormalize,
    NormalizeThenResample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    /// Target spacing in mm; `None` keeps the native grid.
    pub target_spacing: Option<[f64; 3]>,
    /// Skip intensity normalization when false.
    pub normalize: bool,
    pub normalization: NormalizationParams,
    pub order: StageOrder,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            target_spacing: Some([1.0, 1.0, 1.0]),
            normalize: true,
            normalization: NormalizationParams::default(),
            order: StageOrder::default(),
        }
    }
}

/// What was actually applied to a volume; written as a sidecar next to outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub source_id: String,
    pub input_shape: [usize; 3],
    pub input_spacing: [f64; 3],
    pub output_shape: [usize; 3],
    pub output_spacing: [f64; 3],
    pub order: StageOrder,
    pub normalization: Option<NormalizationParams>,
}

/// Runs resampling and normalization in the configured order.
pub fn preprocess_volume(vol: &Volume, opts: &PreprocessOptions) -> Result<(Volume, PreprocessRecord)> {
    opts.normalization.validate()?;
    let resample = |v: &Volume| match opts.target_spacing {
        Some(t) => resample_isotropic(v, t),
        None => Ok(v.clone()),
    };
    let mut used = None;
    let mut normalize = |v: &Volume| -> Result<Volume> {
        if !opts.normalize {
            return Ok(v.clone());
        }
        let mut params = opts.normalization.clone();
        if params.sigma_hat.is_none() {
            params.sigma_hat = Some(estimate_rician_sigma(v, &params)?);
        }
        let out = rician_normalize(v, &params)?;
        used = Some(params);
        Ok(out)
    };
    let out = match opts.order {
        StageOrder::ResampleThenNormalize => normalize(&resample(vol)?)?,
        StageOrder::NormalizeThenResample => resample(&normalize(vol)?)?,
    };
    let record = PreprocessRecord {
        source_id: vol.source_id.clone(),
        input_shape: vol.shape,
        input_spacing: vol.spacing,
        output_shape: out.shape,
        output_spacing: out.spacing,
        order: opts.order,
        normalization: used,
    };
    Ok((out, record))
}
