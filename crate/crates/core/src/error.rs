//! Error type shared by every pipeline stage.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid arguments or configuration values.
    Usage,
    /// Malformed or unsupported file content.
    Format,
    /// Filesystem failure.
    Io,
    /// Train/test leakage found during dataset assembly or audit.
    Leakage,
    /// Every benchmark diverged.
    Diverged,
    /// Numerical or logical failure inside a computation.
    Compute,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("IoFailure: {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("BadMagic: {0}")]
    BadMagic(String),
    #[error("UnsupportedDatatype: datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("InvalidHeader: {0}")]
    InvalidHeader(String),
    #[error("TruncatedPixelData: need {needed} bytes, file has {actual}")]
    TruncatedPixelData { needed: u64, actual: u64 },
    #[error("NonFiniteVoxel: voxel {index} is not finite")]
    NonFiniteVoxel { index: usize },
    #[error("ValueOutOfRangeForDtype: value {value} does not fit {dtype}")]
    ValueOutOfRangeForDtype { value: f64, dtype: &'static str },
    #[error("UnsupportedTransferSyntax: {0}")]
    UnsupportedTransferSyntax(String),
    #[error("MissingRequiredTag: ({group:04X},{element:04X}) in {file}")]
    MissingRequiredTag { group: u16, element: u16, file: String },
    #[error("MalformedDicom: {0}")]
    MalformedDicom(String),
    #[error("InconsistentGeometry: {0}")]
    InconsistentGeometry(String),
    #[error("NonUniformSliceGap: max deviation {max_deviation:.4} mm exceeds 10% of median gap {median:.4} mm")]
    NonUniformSliceGap { median: f64, max_deviation: f64 },
    #[error("InvalidVolume: {0}")]
    InvalidVolume(String),
    #[error("DegenerateOutput: resampling {shape:?} at {spacing:?} to {target:?} collapses every axis")]
    DegenerateOutput {
        shape: [usize; 3],
        spacing: [f64; 3],
        target: [f64; 3],
    },
    #[error("TooFewVoxels: {0} voxels, need at least 1000")]
    TooFewVoxels(usize),
    #[error("NonBinaryMask: value {0} at pixel {1}")]
    NonBinaryMask(f64, usize),
    #[error("MalformedLine: {path}:{line}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("OutOfRangeValue: {0}")]
    OutOfRangeValue(String),
    #[error("TooFewPatients: {0} patients, need at least 5")]
    TooFewPatients(usize),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("NonFiniteActivation: {0}")]
    NonFiniteActivation(String),
    #[error("NonFiniteUpdate: parameter {0}")]
    NonFiniteUpdate(String),
    #[error("DivergedTraining: non-finite loss at epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("EmptyDataset: {0}")]
    EmptyDataset(String),
    #[error("FingerprintMismatch: weights {found:016x}, config {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("BadWeightsFile: {0}")]
    BadWeightsFile(String),
    #[error("ZeroGroundTruth: average precision needs at least one ground-truth box")]
    ZeroGroundTruth,
    #[error("TooFewReports: {0} reports, need at least 2")]
    TooFewReports(usize),
    #[error("MissingWeights: {0}")]
    MissingWeights(String),
    #[error("LeakageDetected: {0}")]
    LeakageDetected(String),
    #[error("AllBenchmarksDiverged")]
    AllBenchmarksDiverged,
    #[error("EllipsoidOutOfBounds: {0}")]
    EllipsoidOutOfBounds(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("ManifestError: {0}")]
    Manifest(String),
    #[error("JsonError: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    /// Stable variant name, printed by the CLI on failure.
    pub fn name(&self) -> &'static str {
        match self {
            Error::IoFailure { .. } => "IoFailure",
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedDatatype(_) => "UnsupportedDatatype",
            Error::InvalidHeader(_) => "InvalidHeader",
            Error::TruncatedPixelData { .. } => "TruncatedPixelData",
            Error::NonFiniteVoxel { .. } => "NonFiniteVoxel",
            Error::ValueOutOfRangeForDtype { .. } => "ValueOutOfRangeForDtype",
            Error::UnsupportedTransferSyntax(_) => "UnsupportedTransferSyntax",
            Error::MissingRequiredTag { .. } => "MissingRequiredTag",
            Error::MalformedDicom(_) => "MalformedDicom",
            Error::InconsistentGeometry(_) => "InconsistentGeometry",
            Error::NonUniformSliceGap { .. } => "NonUniformSliceGap",
            Error::InvalidVolume(_) => "InvalidVolume",
            Error::DegenerateOutput { .. } => "DegenerateOutput",
            Error::TooFewVoxels(_) => "TooFewVoxels",
            Error::NonBinaryMask(..) => "NonBinaryMask",
            Error::MalformedLine { .. } => "MalformedLine",
            Error::OutOfRangeValue(_) => "OutOfRangeValue",
            Error::TooFewPatients(_) => "TooFewPatients",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteActivation(_) => "NonFiniteActivation",
            Error::NonFiniteUpdate(_) => "NonFiniteUpdate",
            Error::DivergedTraining { .. } => "DivergedTraining",
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::FingerprintMismatch { .. } => "FingerprintMismatch",
            Error::BadWeightsFile(_) => "BadWeightsFile",
            Error::ZeroGroundTruth => "ZeroGroundTruth",
            Error::TooFewReports(_) => "TooFewReports",
            Error::MissingWeights(_) => "MissingWeights",
            Error::LeakageDetected(_) => "LeakageDetected",
            Error::AllBenchmarksDiverged => "AllBenchmarksDiverged",
            Error::EllipsoidOutOfBounds(_) => "EllipsoidOutOfBounds",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Manifest(_) => "ManifestError",
            Error::Json(_) => "JsonError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::IoFailure { .. } => ErrorClass::Io,
            Error::InvalidConfig(_) | Error::TooFewPatients(_) => ErrorClass::Usage,
            Error::LeakageDetected(_) => ErrorClass::Leakage,
            Error::AllBenchmarksDiverged => ErrorClass::Diverged,
            Error::BadMagic(_)
            | Error::UnsupportedDatatype(_)
            | Error::InvalidHeader(_)
            | Error::TruncatedPixelData { .. }
            | Error::NonFiniteVoxel { .. }
            | Error::UnsupportedTransferSyntax(_)
            | Error::MissingRequiredTag { .. }
            | Error::MalformedDicom(_)
            | Error::InconsistentGeometry(_)
            | Error::NonUniformSliceGap { .. }
            | Error::NonBinaryMask(..)
            | Error::MalformedLine { .. }
            | Error::OutOfRangeValue(_)
            | Error::BadWeightsFile(_)
            | Error::FingerprintMismatch { .. }
            | Error::Manifest(_)
            | Error::Json(_) => ErrorClass::Format,
            _ => ErrorClass::Compute,
        }
    }
}
