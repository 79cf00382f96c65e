use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};

/// One patient-level train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSplit {
    /// 1-based.
    pub benchmark_id: u32,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl BenchmarkSplit {
    /// SHA-256 over the sorted train and test lists.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"train:");
        h.update(self.train.join(",").as_bytes());
        h.update(b";test:");
        h.update(self.test.join(",").as_bytes());
        hex::encode(h.finalize())
    }

    pub fn is_test(&self, patient: &str) -> bool {
        self.test.binary_search_by(|p| p.as_str().cmp(patient)).is_ok()
    }

    pub fn is_train(&self, patient: &str) -> bool {
        self.train.binary_search_by(|p| p.as_str().cmp(patient)).is_ok()
    }

    /// Copies of `manifest` entries for this benchmark, with splits filled in.
    pub fn assign(&self, manifest: &DatasetManifest) -> Result<DatasetManifest> {
        let entries: Vec<ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.benchmark_id.is_none())
            .map(|e| {
                let mut e = e.clone();
                e.benchmark_id = Some(self.benchmark_id);
                e.split = if self.is_test(&e.patient_id) {
                    Split::Test
                } else if self.is_train(&e.patient_id) {
                    Split::Train
                } else {
                    Split::Unassigned
                };
                e
            })
            .collect();
        DatasetManifest::new(entries)
    }
}

/// Independent seeded patient-level shuffles, one per benchmark.
///
/// Benchmark `b` (1-based) shuffles the sorted patient list with seed `seed + b` and
/// takes the first `round(n * test_fraction)` patients (at least 1, at most n - 1) as test.
pub fn make_benchmarks(patients: &[String], n_benchmarks: u32, test_fraction: f64, seed: u64) -> Result<Vec<BenchmarkSplit>> {
    let mut unique: Vec<String> = patients.to_vec();
    unique.sort();
    unique.dedup();
    let n = unique.len();
    if n < 5 {
        return Err(Error::TooFewPatients(n));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    if n_benchmarks == 0 {
        return Err(Error::InvalidConfig("n_benchmarks must be at least 1".into()));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    Ok((1..=n_benchmarks)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
            let mut order = unique.clone();
            order.shuffle(&mut rng);
            let mut test = order[..n_test].to_vec();
            let mut train = order[n_test..].to_vec();
            test.sort();
            train.sort();
            BenchmarkSplit {
                benchmark_id: b,
                train,
                test,
            }
        })
        .collect())
}
