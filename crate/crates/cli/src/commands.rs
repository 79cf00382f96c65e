//! One function per subcommand. Each returns the text for standard output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use renaldet::annotations::{
    read_detections, read_labels, write_detections, AnnotationSource, DatasetManifest,
};
use renaldet::dataset::{
    build_dataset, discover_raw, load_inputs, read_manifest, series_name, slice_file_name,
    training_samples_with,
};
use renaldet::detector::{
    load_weights, predict, save_weights, train_with_observer, PredictOptions,
};
use renaldet::error::{Error, Result};
use renaldet::evaluation::{aggregate_benchmarks, evaluate, EvalImage, MetricsReport};
use renaldet::phantom::{generate_corpus, CorpusSpec};
use renaldet::preprocess::{extract_axial_slices, preprocess_volume, PreprocessOptions};
use renaldet::progress;
use renaldet::selftrain::{audit_ledger, RunLedger, SelfTrainRun, LEDGER_FILE};
use renaldet::volume_io::{read_volume, write_nifti, NiftiDatatype};
use serde_json::json;
use walkdir::WalkDir;

use crate::config::{Needs, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Normalize {
    Rician,
    None,
}

pub struct ConvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// `None` keeps native spacing.
    pub resample: Option<[f64; 3]>,
    pub normalize: Normalize,
    pub slices: Option<PathBuf>,
}

pub fn convert(cfg: &PipelineConfig, args: &ConvertArgs) -> Result<String> {
    let opts = PreprocessOptions {
        target_spacing: args.resample,
        normalize: args.normalize == Normalize::Rician,
        ..cfg.build.preprocess.clone()
    };
    let volume = read_volume(&args.input)?;
    let (out, record) = preprocess_volume(&volume, &opts)?;
    write_nifti(&out, &args.output, NiftiDatatype::Float32)?;
    if let Some(dir) = &args.slices {
        for s in extract_axial_slices(&out)? {
            let vol = s.to_volume([out.spacing[0], out.spacing[1]]);
            write_nifti(
                &vol,
                dir.join(slice_file_name(s.slice_index, "nii")),
                NiftiDatatype::Float32,
            )?;
        }
    }
    let mut text = format!(
        "{} -> {}\nshape {:?} -> {:?}\nspacing {:?} -> {:?}\n",
        args.input.display(),
        args.output.display(),
        record.input_shape,
        record.output_shape,
        record.input_spacing,
        record.output_spacing
    );
    if let Some(n) = &record.normalization {
        let _ = writeln!(text, "sigma_hat {:.6}", n.sigma_hat.unwrap_or(f64::NAN));
    }
    Ok(text)
}

pub fn build(cfg: &PipelineConfig, raw: Option<&Path>, out: Option<&Path>) -> Result<String> {
    let raw_root = match raw {
        Some(r) => r.to_path_buf(),
        None => {
            cfg.validate(Needs::RawRoot)?;
            cfg.paths.raw_root.clone().expect("validated")
        }
    };
    let root = out.unwrap_or(&cfg.paths.data_root);
    let series = discover_raw(&raw_root)?;
    let manifest = build_dataset(&series, root, &cfg.build)?;
    Ok(manifest_summary(&manifest, root))
}

fn manifest_summary(m: &DatasetManifest, root: &Path) -> String {
    let count = |s: AnnotationSource| {
        m.entries
            .iter()
            .filter(|e| e.annotation_source == s)
            .count()
    };
    format!(
        "{}: {} series from {} patients ({} annotated, {} unannotated), {} slices\n",
        root.display(),
        m.entries.len(),
        m.patients().len(),
        count(AnnotationSource::Human),
        count(AnnotationSource::None),
        m.entries.iter().map(|e| e.slice_count).sum::<usize>()
    )
}

pub fn phantom(
    cfg: &PipelineConfig,
    out: Option<&Path>,
    patients: Option<usize>,
) -> Result<String> {
    let mut spec: CorpusSpec = cfg
        .phantom
        .clone()
        .unwrap_or_default()
        .corpus_spec(&cfg.build);
    if let Some(n) = patients {
        spec.n_patients = n;
    }
    let root = out.unwrap_or(&cfg.paths.data_root);
    let manifest = generate_corpus(&spec, root)?;
    Ok(manifest_summary(&manifest, root))
}

/// Trains on every annotated series of the dataset. Pseudo-labels are read from `pseudo_root`.
pub fn train(
    cfg: &PipelineConfig,
    out: &Path,
    init: Option<&Path>,
    pseudo_root: Option<&Path>,
) -> Result<String> {
    cfg.validate(Needs::DataRoot)?;
    let root = &cfg.paths.data_root;
    let manifest = match pseudo_root {
        Some(p) => DatasetManifest::read(p.join(renaldet::dataset::MANIFEST_FILE))?,
        None => read_manifest(root)?,
    };
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| e.is_annotated())
        .collect();
    let samples = training_samples_with(
        root,
        pseudo_root.unwrap_or(root),
        &entries,
        cfg.train.image_size,
        cfg.selftrain.include_empty_slices,
    )?;
    let init = init.map(load_weights).transpose()?;
    let outcome = train_with_observer(&cfg.train, &samples, init.as_ref(), |epoch, loss| {
        progress::emit(
            "epoch",
            json!({"stage": "train", "epoch": epoch + 1, "loss": loss}),
        )
    })?;
    save_weights(&outcome.final_weights, out)?;
    Ok(format!(
        "trained on {} slices for {} epochs, final loss {:.6}\nweights {}\n",
        samples.len(),
        outcome.epoch_losses.len(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    ))
}

/// Writes `<out>/<series>/slice_NNN.txt` detection files for every series in the dataset.
pub fn detect(
    cfg: &PipelineConfig,
    weights: &Path,
    out: &Path,
    opts: &PredictOptions,
) -> Result<String> {
    cfg.validate(Needs::DataRoot)?;
    let root = &cfg.paths.data_root;
    let weights = load_weights(weights)?;
    let manifest = read_manifest(root)?;
    let mut boxes = 0;
    let mut slices = 0;
    for entry in &manifest.entries {
        let inputs = load_inputs(root, entry, cfg.train.image_size)?;
        for (k, dets) in predict(&weights, &cfg.train, &inputs, opts)?
            .iter()
            .enumerate()
        {
            write_detections(
                dets,
                out.join(series_name(entry)).join(slice_file_name(k, "txt")),
            )?;
            boxes += dets.len();
            slices += 1;
        }
        progress::emit("detected", json!({"series": entry.series_path}));
    }
    Ok(format!(
        "{boxes} boxes on {slices} slices written to {}\n",
        out.display()
    ))
}

/// Label files under `dir`, as paths relative to it, sorted.
fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for item in WalkDir::new(dir).sort_by_file_name() {
        let item = item.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(
                path,
                e.into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("walk failed")),
            )
        })?;
        if item.file_type().is_file() && item.path().extension().is_some_and(|x| x == "txt") {
            out.push(
                item.path()
                    .strip_prefix(dir)
                    .expect("walk stays under root")
                    .to_path_buf(),
            );
        }
    }
    Ok(out)
}

/// The patient a label file belongs to: the part of its first path component before `__`.
fn patient_of(rel: &Path) -> String {
    let first = rel
        .components()
        .next()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .unwrap_or_default();
    if rel.components().count() > 1 {
        first.split("__").next().unwrap_or(&first).to_string()
    } else {
        String::new()
    }
}

/// Scores every ground-truth file in `gt` against the same relative path in `pred`; a missing
/// prediction file means no detections.
pub fn eval(
    cfg: &PipelineConfig,
    pred: &Path,
    gt: &Path,
    out: Option<&Path>,
) -> Result<(String, MetricsReport)> {
    cfg.eval.validate()?;
    if !gt.is_dir() {
        return Err(Error::InvalidConfig(format!(
            "ground-truth directory {} does not exist",
            gt.display()
        )));
    }
    let mut images = Vec::new();
    for rel in label_files(gt)? {
        let p = pred.join(&rel);
        let predictions = if p.is_file() {
            read_detections(&p)?
        } else {
            Vec::new()
        };
        images.push(EvalImage {
            image_id: rel.to_string_lossy().replace('\\', "/"),
            patient_id: patient_of(&rel),
            predictions,
            ground_truth: read_labels(gt.join(&rel))?,
        });
    }
    let report = evaluate(&images, &cfg.eval)?;
    if let Some(dir) = out {
        report.write_all(dir, "metrics")?;
    }
    let text = format!(
        "images {}  ground truth {}\nPPV {:.4}  sensitivity {:.4}  mAP@0.5 {:.4}  best F1 {:.4} at {:.2}{}\n",
        report.n_images,
        report.n_ground_truth,
        report.ppv,
        report.sensitivity,
        report.map50,
        report.f1_best,
        report.conf_at_f1_best,
        if report.degenerate_ppv { "  (no detections: PPV undefined)" } else { "" }
    );
    Ok((text, report))
}

pub fn selftrain(cfg: &PipelineConfig, jobs: usize) -> Result<String> {
    cfg.validate(Needs::DataRoot)?;
    let run = SelfTrainRun {
        data_root: cfg.paths.data_root.clone(),
        out_root: cfg.paths.output_root.clone(),
        train: cfg.train.clone(),
        plan: cfg.selftrain.clone(),
        eval: cfg.eval,
        jobs,
    };
    let ledger = run.run()?;
    read_text(&cfg.paths.output_root.join(&ledger.report_markdown.path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Audits a finished run and prints its table, or aggregates standalone metrics reports.
pub fn report(run: Option<&Path>, metrics: &[PathBuf]) -> Result<String> {
    let mut text = String::new();
    if let Some(root) = run {
        let ledger = RunLedger::read(&root.join(LEDGER_FILE))?;
        audit_ledger(root, &ledger)?;
        text.push_str(&read_text(&root.join(&ledger.report_markdown.path))?);
        text.push_str("\nledger audit passed\n");
    }
    if !metrics.is_empty() {
        let reports = metrics
            .iter()
            .map(|p| MetricsReport::read_json(p))
            .collect::<Result<Vec<_>>>()?;
        let agg = aggregate_benchmarks(&reports)?;
        let _ = writeln!(
            text,
            "{} reports: PPV {}  sensitivity {}  mAP@0.5 {}",
            agg.n,
            agg.ppv.display(),
            agg.sensitivity.display(),
            agg.map50.display()
        );
    }
    Ok(text)
}
