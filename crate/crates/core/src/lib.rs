//! Kidney detection pipeline for volumetric MRI.
//!
//! The crate covers the full path from scanner files to benchmark tables:
//!
//! - [`volume_io`]: NIfTI-1 and minimal DICOM ingestion into a [`Volume`].
//! - [`preprocess`]: isotropic resampling, Rician bias correction, axial slicing.
//! - [`annotations`]: mask-to-box conversion, YOLO text labels, dataset manifests and splits.
//! - [`detector`]: a compact grid detector with analytic gradients and an AdamW trainer.
//! - [`evaluation`]: matching, PPV/sensitivity, all-point AP, F1 sweeps and aggregates.
//! - [`selftrain`]: the three-step primary / pseudo-label / final training procedure.
//! - [`phantom`]: synthetic abdominal volumes with ellipsoidal kidneys for end-to-end runs.

pub mod annotations;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod phantom;
pub mod preprocess;
pub mod progress;
pub mod selftrain;
pub mod volume;
pub mod volume_io;

pub use error::{Error, ErrorClass, Result};
pub use volume::Volume;
