//! The three training steps and the end-to-end run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ledger::{audit_ledger, sha256_hex, ArtifactRef, BenchmarkRecord, PseudoRecord, RunLedger, StageRecord, StageStatus, LEDGER_FILE};
use super::plan::{select_best, MetricsSummary, SelfTrainPlan, WarmStartSource};
use crate::annotations::{format_detections, make_benchmarks, AnnotationSource, BenchmarkSplit, DatasetManifest, ManifestEntry, PseudoProvenance};
use crate::dataset::{label_path, load_inputs, load_targets, series_name, slice_file_name, training_samples_with, MANIFEST_FILE};
use crate::detector::{decode_weights, encode_weights, predict, train_with_observer, ModelWeights, PredictOptions, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_rows, benchmark_table_markdown, evaluate, Aggregate, BenchmarkRow, EvalConfig, EvalImage, MetricsReport};
use crate::progress;

/// Inputs shared by every step of one run.
#[derive(Debug, Clone)]
pub struct SelfTrainRun {
    /// Dataset root holding slices, human labels and the input manifest.
    pub data_root: PathBuf,
    /// Everything the run writes goes under here.
    pub out_root: PathBuf,
    pub train: TrainConfig,
    pub plan: SelfTrainPlan,
    pub eval: EvalConfig,
    /// Benchmarks trained concurrently. Results do not depend on this value.
    pub jobs: usize,
}

/// Runs `f(0..n)` on up to `jobs` threads and returns results in index order. The first error
/// by index wins.
fn fan_out<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let r = f(k);
                *slots[k].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every index visited"))
        .collect()
}

/// A trained model, its artifacts and its test-split report.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub record: StageRecord,
    /// The weights as stored on disk (f32 precision).
    pub weights: Option<ModelWeights>,
    pub report: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct PrimaryResult {
    pub split: BenchmarkSplit,
    pub stage: StageResult,
}

#[derive(Debug, Clone)]
pub struct Step1Outcome {
    pub primaries: Vec<PrimaryResult>,
    pub best: u32,
}

/// Series a benchmark's final model trains on.
#[derive(Debug, Clone)]
pub struct FinalTrainSet<'m> {
    pub entries: Vec<&'m ManifestEntry>,
    pub patients: Vec<String>,
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FinalResult {
    pub benchmark_id: u32,
    pub patients: Vec<String>,
    pub excluded: Vec<String>,
    pub stage: StageResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub best_benchmark: u32,
    pub primary: Vec<BenchmarkRow>,
    #[serde(rename = "final")]
    pub final_: Vec<BenchmarkRow>,
    pub primary_average: Option<Aggregate>,
    pub final_average: Option<Aggregate>,
    pub failed_primary: Vec<u32>,
    pub failed_final: Vec<u32>,
}

/// Human-annotated training series plus all pseudo-labeled series, minus every series of a
/// test patient when `exclude_test_linked` is set. Any test patient left in the set is a
/// [`Error::LeakageDetected`].
pub fn assemble_final_train<'m>(
    manifest: &'m DatasetManifest,
    split: &BenchmarkSplit,
    exclude_test_linked: bool,
) -> Result<FinalTrainSet<'m>> {
    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for e in &manifest.entries {
        let candidate = match e.annotation_source {
            AnnotationSource::Human => split.is_train(&e.patient_id),
            AnnotationSource::Pseudo => true,
            AnnotationSource::None => false,
        };
        if !candidate {
            continue;
        }
        if exclude_test_linked && split.is_test(&e.patient_id) {
            excluded.push(e.series_path.clone());
        } else {
            entries.push(e);
        }
    }
    let patients: BTreeSet<String> = entries.iter().map(|e| e.patient_id.clone()).collect();
    if let Some(p) = patients.iter().find(|p| split.is_test(p)) {
        return Err(Error::LeakageDetected(format!(
            "benchmark {}: test patient {p} in the final training set",
            split.benchmark_id
        )));
    }
    Ok(FinalTrainSet {
        entries,
        patients: patients.into_iter().collect(),
        excluded,
    })
}

fn human_entries<'m>(manifest: &'m DatasetManifest, pred: impl Fn(&str) -> bool) -> Vec<&'m ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| e.annotation_source == AnnotationSource::Human && pred(&e.patient_id))
        .collect()
}

impl SelfTrainRun {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.plan.validate()?;
        self.eval.validate()
    }

    fn seed_for(&self, benchmark_id: u32) -> u64 {
        self.train.seed.wrapping_add(benchmark_id as u64)
    }

    fn bench_dir(benchmark_id: u32) -> String {
        format!("benchmarks/b{benchmark_id:02}")
    }

    /// Predicts every slice of `entries` and scores against their human labels.
    pub fn evaluate_model(&self, weights: &ModelWeights, entries: &[&ManifestEntry]) -> Result<MetricsReport> {
        let opts = PredictOptions {
            conf_threshold: self.plan.eval_min_conf,
            nms_iou: self.plan.pseudo_nms_iou,
            max_boxes: self.plan.eval_max_boxes,
        };
        let mut images = Vec::new();
        for e in entries {
            let inputs = load_inputs(&self.data_root, e, self.train.image_size)?;
            let targets = load_targets(&self.data_root, e)?;
            let preds = predict(weights, &self.train, &inputs, &opts)?;
            for (k, (p, g)) in preds.into_iter().zip(targets).enumerate() {
                images.push(EvalImage {
                    image_id: format!("{}/{}", e.series_path, slice_file_name(k, "nii")),
                    patient_id: e.patient_id.clone(),
                    predictions: p,
                    ground_truth: g,
                });
            }
        }
        evaluate(&images, &self.eval)
    }

    /// Trains one model, stores weights and report under `benchmarks/bNN/<stage>*`.
    fn train_stage(
        &self,
        stage: &str,
        benchmark_id: u32,
        train_entries: &[&ManifestEntry],
        test_entries: &[&ManifestEntry],
        init: Option<&ModelWeights>,
        epochs: usize,
    ) -> Result<StageResult> {
        let config = TrainConfig {
            epochs,
            seed: self.seed_for(benchmark_id),
            ..self.train.clone()
        };
        let samples = training_samples_with(
            &self.data_root,
            &self.out_root,
            train_entries,
            config.image_size,
            self.plan.include_empty_slices,
        )?;
        let observer = |epoch: usize, loss: f64| {
            progress::emit(
                "epoch",
                json!({"stage": stage, "benchmark": benchmark_id, "epoch": epoch + 1, "loss": loss}),
            )
        };
        let outcome = match train_with_observer(&config, &samples, init, observer) {
            Ok(o) => o,
            Err(Error::DivergedTraining { epoch }) => {
                progress::emit("diverged", json!({"stage": stage, "benchmark": benchmark_id, "epoch": epoch}));
                return Ok(StageResult {
                    record: StageRecord {
                        status: StageStatus::Diverged,
                        train_slices: samples.len(),
                        diverged_at_epoch: Some(epoch),
                        ..StageRecord::skipped()
                    },
                    weights: None,
                    report: None,
                });
            }
            Err(e) => return Err(e),
        };
        let dir = Self::bench_dir(benchmark_id);
        let bytes = encode_weights(&outcome.final_weights);
        let weights_ref = ArtifactRef::write(&self.out_root, &format!("{dir}/{stage}.rdw"), &bytes)?;
        let stored = decode_weights(&bytes)?;
        let report = self.evaluate_model(&stored, test_entries)?;
        let report_ref = ArtifactRef::write(&self.out_root, &format!("{dir}/{stage}_report.json"), report.to_json().as_bytes())?;
        ArtifactRef::write(&self.out_root, &format!("{dir}/{stage}_pr.csv"), report.pr_curve_csv().as_bytes())?;
        ArtifactRef::write(&self.out_root, &format!("{dir}/{stage}_f1.csv"), report.f1_curve_csv().as_bytes())?;
        progress::emit(
            "evaluated",
            json!({"stage": stage, "benchmark": benchmark_id, "ppv": report.ppv, "sensitivity": report.sensitivity, "map50": report.map50}),
        );
        Ok(StageResult {
            record: StageRecord {
                status: StageStatus::Ok,
                weights: Some(weights_ref),
                report: Some(report_ref),
                metrics: Some(MetricsSummary::from(&report)),
                train_slices: samples.len(),
                epoch_losses: outcome.epoch_losses,
                diverged_at_epoch: None,
            },
            weights: Some(stored),
            report: Some(report),
        })
    }

    /// Splits annotated patients into benchmarks, trains and evaluates a primary model on each,
    /// and selects the best surviving one.
    pub fn step1_train_primaries(&self, manifest: &DatasetManifest) -> Result<Step1Outcome> {
        let patients = manifest.annotated_patients();
        let splits = make_benchmarks(&patients, self.plan.n_benchmarks, self.plan.test_fraction, self.plan.seed)?;
        for split in &splits {
            split.assign(manifest)?;
        }
        let stages = fan_out(splits.len(), self.jobs, |k| {
            let split = &splits[k];
            let train = human_entries(manifest, |p| split.is_train(p));
            let test = human_entries(manifest, |p| split.is_test(p));
            self.train_stage("primary", split.benchmark_id, &train, &test, None, self.train.epochs)
        })?;
        let primaries: Vec<PrimaryResult> = splits
            .into_iter()
            .zip(stages)
            .map(|(split, stage)| PrimaryResult { split, stage })
            .collect();
        let candidates: Vec<(u32, MetricsSummary)> = primaries
            .iter()
            .filter_map(|p| p.stage.record.metrics.map(|m| (p.split.benchmark_id, m)))
            .collect();
        let best = select_best(&candidates, self.plan.selection_metric).ok_or(Error::AllBenchmarksDiverged)?;
        progress::emit("best_selected", json!({"benchmark": best}));
        Ok(Step1Outcome { primaries, best })
    }

    /// Labels every unannotated (or previously pseudo-labeled) series with the weights in
    /// `weights_ref`, writing `pseudo/<series>/slice_NNN.txt` and `manifest.jsonl` under the
    /// output root. Human annotations are never touched.
    pub fn step2_pseudolabel(
        &self,
        manifest: &DatasetManifest,
        weights_ref: &ArtifactRef,
        source_benchmark: u32,
    ) -> Result<(DatasetManifest, PseudoRecord)> {
        let path = self.out_root.join(&weights_ref.path);
        if !path.is_file() {
            return Err(Error::MissingWeights(weights_ref.path.clone()));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let weights = decode_weights(&bytes)?;
        let model_id = sha256_hex(&bytes);
        let opts = PredictOptions {
            conf_threshold: self.plan.pseudo_conf_threshold,
            nms_iou: self.plan.pseudo_nms_iou,
            max_boxes: self.plan.max_pseudo_boxes_per_slice,
        };
        let mut updated = manifest.clone();
        let mut files = Vec::new();
        let (mut series, mut slices, mut boxes, mut empty) = (0, 0, 0, 0);
        for entry in &mut updated.entries {
            if entry.annotation_source == AnnotationSource::Human {
                continue;
            }
            let inputs = load_inputs(&self.data_root, entry, self.train.image_size)?;
            let preds = predict(&weights, &self.train, &inputs, &opts)?;
            entry.empty_slices.clear();
            for (k, dets) in preds.iter().enumerate() {
                let abs = label_path(&self.out_root, entry, AnnotationSource::Pseudo, k);
                let rel = abs
                    .strip_prefix(&self.out_root)
                    .expect("label path under output root")
                    .to_string_lossy()
                    .replace('\\', "/");
                files.push(ArtifactRef::write(&self.out_root, &rel, format_detections(dets).as_bytes())?);
                if dets.is_empty() {
                    entry.empty_slices.push(k);
                    empty += 1;
                }
                boxes += dets.len();
            }
            slices += preds.len();
            series += 1;
            entry.annotation_source = AnnotationSource::Pseudo;
            entry.pseudo = Some(PseudoProvenance {
                model_id: model_id.clone(),
                conf_threshold: self.plan.pseudo_conf_threshold,
                labels_dir: format!("pseudo/{}", series_name(entry)),
            });
        }
        updated.validate()?;
        let manifest_ref = ArtifactRef::write(&self.out_root, MANIFEST_FILE, updated.to_jsonl()?.as_bytes())?;
        progress::emit("pseudo_labeled", json!({"series": series, "slices": slices, "boxes": boxes}));
        Ok((
            updated,
            PseudoRecord {
                model_id,
                source_benchmark,
                conf_threshold: self.plan.pseudo_conf_threshold,
                series,
                slices,
                boxes,
                empty_slices: empty,
                files,
                manifest: manifest_ref,
            },
        ))
    }

    /// Trains one final model per benchmark on human + pseudo labels, warm-started as planned,
    /// and evaluates it on the untouched step-1 test split.
    pub fn step3_train_final(&self, manifest: &DatasetManifest, step1: &Step1Outcome) -> Result<Vec<FinalResult>> {
        let best_weights = step1
            .primaries
            .iter()
            .find(|p| p.split.benchmark_id == step1.best)
            .and_then(|p| p.stage.weights.as_ref());
        let epochs = self.plan.final_epochs.unwrap_or(self.train.epochs);
        fan_out(step1.primaries.len(), self.jobs, |k| {
            let p = &step1.primaries[k];
            let split = &p.split;
            let set = assemble_final_train(manifest, split, self.plan.exclude_test_linked)?;
            let init = match (self.plan.warm_start, self.plan.warm_start_source) {
                (false, _) => None,
                (true, WarmStartSource::PerBenchmark) => match p.stage.weights.as_ref() {
                    Some(w) => Some(w),
                    None => {
                        return Ok(FinalResult {
                            benchmark_id: split.benchmark_id,
                            patients: set.patients,
                            excluded: set.excluded,
                            stage: StageResult {
                                record: StageRecord::skipped(),
                                weights: None,
                                report: None,
                            },
                        })
                    }
                },
                (true, WarmStartSource::Best) => best_weights,
            };
            let test = human_entries(manifest, |pid| split.is_test(pid));
            let stage = self.train_stage("final", split.benchmark_id, &set.entries, &test, init, epochs)?;
            Ok(FinalResult {
                benchmark_id: split.benchmark_id,
                patients: set.patients,
                excluded: set.excluded,
                stage,
            })
        })
    }

    /// Runs all three steps, writes the report and ledger, and audits the result.
    pub fn run(&self) -> Result<RunLedger> {
        self.validate()?;
        let manifest_path = self.data_root.join(MANIFEST_FILE);
        let manifest_bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest = DatasetManifest::from_jsonl(&String::from_utf8_lossy(&manifest_bytes))?;
        progress::emit("start", json!({"series": manifest.entries.len(), "benchmarks": self.plan.n_benchmarks}));

        let step1 = self.step1_train_primaries(&manifest)?;
        let best_ref = step1
            .primaries
            .iter()
            .find(|p| p.split.benchmark_id == step1.best)
            .and_then(|p| p.stage.record.weights.clone())
            .ok_or_else(|| Error::MissingWeights(format!("benchmark {}", step1.best)))?;
        let (pseudo_manifest, pseudo) = self.step2_pseudolabel(&manifest, &best_ref, step1.best)?;
        let finals = self.step3_train_final(&pseudo_manifest, &step1)?;

        let rows = |stages: Vec<(u32, &StageResult)>| -> (Vec<BenchmarkRow>, Vec<u32>) {
            let mut ok = Vec::new();
            let mut failed = Vec::new();
            for (id, s) in stages {
                match &s.report {
                    Some(r) => ok.push(BenchmarkRow::from_report(id, r)),
                    None => failed.push(id),
                }
            }
            (ok, failed)
        };
        let (primary_rows, failed_primary) = rows(step1.primaries.iter().map(|p| (p.split.benchmark_id, &p.stage)).collect());
        let (final_rows, failed_final) = rows(finals.iter().map(|f| (f.benchmark_id, &f.stage)).collect());
        let report = RunReport {
            best_benchmark: step1.best,
            primary_average: aggregate_rows(&primary_rows).ok(),
            final_average: aggregate_rows(&final_rows).ok(),
            primary: primary_rows,
            final_: final_rows,
            failed_primary,
            failed_final,
        };
        let report_json = ArtifactRef::write(
            &self.out_root,
            "report.json",
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
        let markdown = format!(
            "# Benchmark performance\n\nBest primary benchmark: {}\n\n{}",
            report.best_benchmark,
            benchmark_table_markdown(&report.primary, &report.final_)
        );
        let report_markdown = ArtifactRef::write(&self.out_root, "report.md", markdown.as_bytes())?;

        let benchmarks = step1
            .primaries
            .iter()
            .zip(finals)
            .map(|(p, f)| BenchmarkRecord {
                benchmark_id: p.split.benchmark_id,
                split_hash: p.split.hash(),
                train_patients: p.split.train.clone(),
                test_patients: p.split.test.clone(),
                primary: p.stage.record.clone(),
                final_train_patients: f.patients,
                excluded_series: f.excluded,
                final_: f.stage.record,
            })
            .collect();
        let ledger = RunLedger {
            format_version: 1,
            input_manifest_sha256: sha256_hex(&manifest_bytes),
            train_config: self.train.clone(),
            plan: self.plan.clone(),
            eval: self.eval,
            benchmarks,
            best_benchmark: step1.best,
            pseudo,
            report_json,
            report_markdown,
        };
        let ledger_path = self.out_root.join(LEDGER_FILE);
        std::fs::write(&ledger_path, ledger.to_json()).map_err(|e| Error::io(&ledger_path, e))?;
        audit_ledger(&self.out_root, &ledger)?;
        progress::emit("done", json!({"best": step1.best}));
        Ok(ledger)
    }
}

/// Output-root-relative path helper for callers that locate artifacts by ledger entry.
pub fn artifact_path(out_root: &Path, a: &ArtifactRef) -> PathBuf {
    out_root.join(&a.path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(patient: &str, study: &str, source: AnnotationSource) -> ManifestEntry {
        ManifestEntry::new(patient, study, &format!("series/{patient}__{study}"), 4, source)
    }

    fn split() -> BenchmarkSplit {
        BenchmarkSplit {
            benchmark_id: 1,
            train: vec!["A".into(), "B".into()],
            test: vec!["P".into()],
        }
    }

    #[test]
    fn fan_out_keeps_index_order() {
        let serial = fan_out(9, 1, |k| Ok(k * k)).unwrap();
        let parallel = fan_out(9, 4, |k| Ok(k * k)).unwrap();
        assert_eq!(serial, parallel);
        let err = fan_out(6, 3, |k| if k >= 2 { Err(Error::AllBenchmarksDiverged) } else { Ok(k) });
        assert!(err.is_err());
    }

    #[test]
    fn test_patient_scans_excluded() {
        let m = DatasetManifest::new(vec![
            entry("A", "S1", AnnotationSource::Human),
            entry("B", "S1", AnnotationSource::Human),
            entry("P", "S1", AnnotationSource::Human),
            entry("P", "S2", AnnotationSource::Pseudo),
            entry("P", "S3", AnnotationSource::Pseudo),
            entry("U", "S1", AnnotationSource::Pseudo),
            entry("V", "S1", AnnotationSource::None),
        ])
        .unwrap();
        let set = assemble_final_train(&m, &split(), true).unwrap();
        assert_eq!(set.patients, vec!["A", "B", "U"]);
        assert_eq!(set.excluded, vec!["series/P__S2", "series/P__S3"]);
        assert!(set.entries.iter().all(|e| e.patient_id != "P"));
    }

    #[test]
    fn disabled_exclusion_is_leakage() {
        let m = DatasetManifest::new(vec![
            entry("A", "S1", AnnotationSource::Human),
            entry("P", "S2", AnnotationSource::Pseudo),
        ])
        .unwrap();
        assert!(matches!(
            assemble_final_train(&m, &split(), false),
            Err(Error::LeakageDetected(_))
        ));
    }
}
