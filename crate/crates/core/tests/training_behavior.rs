//! Observed training behavior on a small phantom set.

use renaldet::annotations::AnnotationSource;
use renaldet::dataset::{training_samples, BuildOptions};
use renaldet::detector::{train, TrainConfig};
use renaldet::phantom::{generate_corpus, CorpusSpec};

#[test]
fn loss_falls_on_most_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        n_patients: 5,
        unannotated_fraction: 0.0,
        linked_study_fraction: 0.0,
        seed: 4,
        build: BuildOptions {
            slices_per_series: Some(4),
            slice_band: [0.3, 0.7],
            ..Default::default()
        },
        ..Default::default()
    };
    let m = generate_corpus(&spec, dir.path()).unwrap();
    let entries: Vec<_> = m.entries.iter().filter(|e| e.annotation_source == AnnotationSource::Human).collect();
    let config = TrainConfig {
        image_size: 48,
        grid_size: 4,
        channels: vec![8, 16, 16],
        epochs: 30,
        ..Default::default()
    };
    let samples = training_samples(dir.path(), &entries, config.image_size, true).unwrap();
    assert_eq!(samples.len(), 20);
    let losses = train(&config, &samples, None).unwrap().epoch_losses;
    let falls = losses.windows(2).filter(|w| w[1] < w[0]).count();
    let fraction = falls as f64 / (losses.len() - 1) as f64;
    assert!(fraction >= 0.8, "loss fell on {falls}/29 epoch pairs: {losses:?}");
}
