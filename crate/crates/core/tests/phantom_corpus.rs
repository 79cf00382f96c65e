//! Whole-corpus properties of the synthetic data generator.

use std::collections::BTreeMap;
use std::path::Path;

use renaldet::annotations::{read_labels, AnnotationSource};
use renaldet::dataset::{label_path, BuildOptions};
use renaldet::phantom::{generate, generate_corpus, CorpusSpec};
use renaldet::preprocess::{estimate_rician_sigma, NormalizationParams};
use renaldet::volume::Volume;

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for item in std::fs::read_dir(&dir).unwrap() {
            let path = item.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn spec() -> CorpusSpec {
    CorpusSpec {
        seed: 17,
        build: BuildOptions {
            slices_per_series: Some(4),
            slice_band: [0.3, 0.7],
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn corpus_bytes_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = generate_corpus(&spec(), a.path()).unwrap();
    generate_corpus(&spec(), b.path()).unwrap();
    assert_eq!(m.patients().len(), 25);
    let unannotated = m
        .patients()
        .into_iter()
        .filter(|p| !m.annotated_patients().contains(p))
        .count();
    assert_eq!(unannotated, 8, "30% of 25 rounds to 8");
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    assert!(ta == tb, "corpus differs between runs");

    // every emitted label file passes validation
    for e in m.entries.iter().filter(|e| e.annotation_source == AnnotationSource::Human) {
        for k in 0..e.slice_count {
            read_labels(label_path(a.path(), e, AnnotationSource::Human, k)).unwrap();
        }
    }
}

#[test]
fn background_sigma_estimate_matches_spec() {
    for (phantom, _) in spec().plan().into_iter().take(5) {
        let case = generate(&phantom).unwrap();
        let air: Vec<f64> = case
            .clean
            .data
            .iter()
            .zip(&case.image.data)
            .filter(|(c, _)| **c == 0.0)
            .map(|(_, v)| *v)
            .collect();
        let n = air.len();
        let vol = Volume::new(air, [n, 1, 1], [1.0; 3]).unwrap();
        let est = estimate_rician_sigma(&vol, &NormalizationParams::default()).unwrap();
        let truth = phantom.sigma();
        assert!((est / truth - 1.0).abs() < 0.10, "{}: {est} vs {truth}", phantom.patient_id);
    }
}
