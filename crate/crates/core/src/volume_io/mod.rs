//! Native volume formats: NIfTI-1 read/write and uncompressed DICOM series read.

pub mod dicom;
pub mod nifti;

use std::path::Path;

pub use dicom::read_dicom_series;
pub use nifti::{read_nifti, write_nifti, NiftiDatatype, NiftiHeader};

use crate::error::Result;
use crate::volume::Volume;

/// Loads a directory as a DICOM series and anything else as NIfTI.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if path.is_dir() {
        read_dicom_series(path)
    } else {
        read_nifti(path)
    }
}
