//! Run ledger: every artifact of a self-training run with its SHA-256, plus the audit.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plan::{MetricsSummary, SelfTrainPlan};
use crate::detector::TrainConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;

pub const LEDGER_FILE: &str = "run_ledger.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file under the output root and the hash of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the output root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

impl ArtifactRef {
    /// Writes `bytes` to `root/rel` and records its hash.
    pub fn write(root: &Path, rel: &str, bytes: &[u8]) -> Result<Self> {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(ArtifactRef {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        })
    }

    pub fn verify(&self, root: &Path) -> Result<()> {
        let path = root.join(&self.path);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != self.sha256 {
            return Err(Error::Manifest(format!(
                "{} hashes to {found}, ledger records {}",
                self.path, self.sha256
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Diverged,
    /// Not run because an input it needs is missing (for example a diverged primary).
    Skipped,
}

/// Artifacts and metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<ArtifactRef>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub report: Option<ArtifactRef>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricsSummary>,
    pub train_slices: usize,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diverged_at_epoch: Option<usize>,
}

impl StageRecord {
    pub fn skipped() -> Self {
        StageRecord {
            status: StageStatus::Skipped,
            weights: None,
            report: None,
            metrics: None,
            train_slices: 0,
            epoch_losses: Vec::new(),
            diverged_at_epoch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub benchmark_id: u32,
    pub split_hash: String,
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
    pub primary: StageRecord,
    /// Patients whose series fed the final model.
    pub final_train_patients: Vec<String>,
    /// Series removed from the final training set because they belong to a test patient.
    pub excluded_series: Vec<String>,
    #[serde(rename = "final")]
    pub final_: StageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoRecord {
    /// SHA-256 of the weights file that produced the labels.
    pub model_id: String,
    pub source_benchmark: u32,
    pub conf_threshold: f64,
    pub series: usize,
    pub slices: usize,
    pub boxes: usize,
    pub empty_slices: usize,
    /// Every pseudo-label file in path order.
    pub files: Vec<ArtifactRef>,
    pub manifest: ArtifactRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub format_version: u32,
    /// SHA-256 of the input manifest.
    pub input_manifest_sha256: String,
    pub train_config: TrainConfig,
    pub plan: SelfTrainPlan,
    pub eval: EvalConfig,
    pub benchmarks: Vec<BenchmarkRecord>,
    pub best_benchmark: u32,
    pub pseudo: PseudoRecord,
    pub report_json: ArtifactRef,
    pub report_markdown: ArtifactRef,
}

impl RunLedger {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn artifacts(&self) -> Vec<&ArtifactRef> {
        let mut out = vec![&self.report_json, &self.report_markdown, &self.pseudo.manifest];
        out.extend(self.pseudo.files.iter());
        for b in &self.benchmarks {
            for stage in [&b.primary, &b.final_] {
                out.extend(stage.weights.iter());
                out.extend(stage.report.iter());
            }
        }
        out
    }
}

/// Re-verifies every artifact hash, the single best benchmark, and that no benchmark trained
/// its final model on any of its test patients.
pub fn audit_ledger(out_root: &Path, ledger: &RunLedger) -> Result<()> {
    for a in ledger.artifacts() {
        a.verify(out_root)?;
    }
    let best: Vec<&BenchmarkRecord> = ledger
        .benchmarks
        .iter()
        .filter(|b| b.benchmark_id == ledger.best_benchmark)
        .collect();
    if best.len() != 1 || best[0].primary.status != StageStatus::Ok {
        return Err(Error::Manifest(format!(
            "best benchmark {} is not exactly one successful primary",
            ledger.best_benchmark
        )));
    }
    for b in &ledger.benchmarks {
        let test: BTreeSet<&String> = b.test_patients.iter().collect();
        let leaked: Vec<&String> = b.final_train_patients.iter().filter(|p| test.contains(p)).collect();
        if !leaked.is_empty() {
            return Err(Error::LeakageDetected(format!(
                "benchmark {}: test patients {leaked:?} in the final training set",
                b.benchmark_id
            )));
        }
        if b.train_patients.iter().any(|p| test.contains(p)) {
            return Err(Error::LeakageDetected(format!(
                "benchmark {}: a patient is in both train and test",
                b.benchmark_id
            )));
        }
    }
    Ok(())
}
