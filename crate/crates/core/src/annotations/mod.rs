//! Bounding-box annotations: mask conversion, YOLO text files, dataset manifest and splits.

mod boxes;
mod labels;
mod manifest;
mod mask;
mod splits;

pub use boxes::{BoxLabel, Detection};
pub use labels::{
    format_detections, format_labels, parse_detections, parse_labels, read_detections, read_labels, write_detections,
    write_labels,
};
pub use manifest::{AnnotationSource, DatasetManifest, ManifestEntry, PseudoProvenance, Split};
pub use mask::mask_to_boxes;
pub use splits::{make_benchmarks, BenchmarkSplit};
