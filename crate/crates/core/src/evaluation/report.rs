//! Dataset-level evaluation and the metrics report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matching::match_detections;
use super::metrics::{average_precision, counts_at, f1_sweep, pr_curve, pr_metrics, ApConvention, Counts, Scored};
use crate::annotations::{BoxLabel, Detection};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Spacing of the F1 confidence grid over [0, 1].
    pub confidence_step: f64,
    pub map_convention: ApConvention,
    /// Confidence at which PPV, sensitivity and counts are reported.
    pub operating_conf: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            confidence_step: 0.01,
            map_convention: ApConvention::AllPoint,
            operating_conf: 0.25,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("iou_threshold {} outside (0, 1)", self.iou_threshold)));
        }
        if !(0.0..=1.0).contains(&self.operating_conf) {
            return Err(Error::InvalidConfig(format!("operating_conf {} outside [0, 1]", self.operating_conf)));
        }
        self.grid_steps().map(|_| ())
    }

    /// Number of grid intervals; the step must divide 1 exactly.
    pub fn grid_steps(&self) -> Result<usize> {
        let step = self.confidence_step;
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidConfig(format!("confidence_step {step} outside (0, 1]")));
        }
        let n = (1.0 / step).round();
        if (n * step - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("confidence_step {step} does not divide 1")));
        }
        Ok(n as usize)
    }
}

/// Predictions and ground truth for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub image_id: String,
    pub patient_id: String,
    pub predictions: Vec<Detection>,
    pub ground_truth: Vec<BoxLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub confidence: f64,
    pub ppv: f64,
    pub sensitivity: f64,
    pub degenerate_ppv: bool,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub ppv: f64,
    pub sensitivity: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ppv: f64,
    pub sensitivity: f64,
    pub map50: f64,
    pub f1_best: f64,
    pub conf_at_f1_best: f64,
    pub pr_curve: Vec<(f64, f64)>,
    pub f1_curve: Vec<(f64, f64)>,
    /// Counts at `operating_conf`.
    pub counts: Counts,
    pub operating_conf: f64,
    pub degenerate_ppv: bool,
    /// The same metrics at confidence 0.5, the literal reading of "mAP at 0.5 confidence".
    pub at_conf_050: OperatingPoint,
    pub n_images: usize,
    pub n_ground_truth: usize,
    pub per_patient: Vec<PatientMetrics>,
}

fn operating_point(scored: &[Scored], n_gt: usize, confidence: f64) -> OperatingPoint {
    let counts = counts_at(scored, n_gt, confidence);
    let m = pr_metrics(counts.tp, counts.fp, n_gt);
    OperatingPoint {
        confidence,
        ppv: m.ppv,
        sensitivity: m.sensitivity,
        degenerate_ppv: m.degenerate_ppv,
        counts,
    }
}

/// Matches every image, then ranks all predictions globally for AP and the curves.
pub fn evaluate(images: &[EvalImage], config: &EvalConfig) -> Result<MetricsReport> {
    config.validate()?;
    let steps = config.grid_steps()?;
    let mut scored = Vec::new();
    let mut per_patient: BTreeMap<&str, (Vec<Scored>, usize)> = BTreeMap::new();
    let mut n_gt = 0;
    for img in images {
        let m = match_detections(&img.predictions, &img.ground_truth, config.iou_threshold);
        let entry = per_patient.entry(img.patient_id.as_str()).or_default();
        for (p, &tp) in img.predictions.iter().zip(&m.pred_tp) {
            let s = Scored {
                confidence: p.confidence,
                tp,
            };
            scored.push(s);
            entry.0.push(s);
        }
        entry.1 += img.ground_truth.len();
        n_gt += img.ground_truth.len();
    }
    let map50 = average_precision(&scored, n_gt, config.map_convention)?;
    let op = operating_point(&scored, n_gt, config.operating_conf);
    let sweep = f1_sweep(&scored, n_gt, steps);
    let per_patient = per_patient
        .into_iter()
        .map(|(id, (s, g))| {
            let p = operating_point(&s, g, config.operating_conf);
            PatientMetrics {
                patient_id: id.to_string(),
                ppv: p.ppv,
                sensitivity: p.sensitivity,
                counts: p.counts,
            }
        })
        .collect();
    Ok(MetricsReport {
        ppv: op.ppv,
        sensitivity: op.sensitivity,
        map50,
        f1_best: sweep.best,
        conf_at_f1_best: sweep.conf_at_best,
        pr_curve: pr_curve(&scored, n_gt),
        f1_curve: sweep.curve,
        counts: op.counts,
        operating_conf: config.operating_conf,
        degenerate_ppv: op.degenerate_ppv,
        at_conf_050: operating_point(&scored, n_gt, 0.5),
        n_images: images.len(),
        n_ground_truth: n_gt,
        per_patient,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for (r, p) in &self.pr_curve {
            out.push_str(&format!("{r:.6},{p:.6}\n"));
        }
        out
    }

    pub fn f1_curve_csv(&self) -> String {
        let mut out = String::from("confidence,f1\n");
        for (c, f) in &self.f1_curve {
            out.push_str(&format!("{c:.2},{f:.6}\n"));
        }
        out
    }

    /// Writes `<stem>.json`, `<stem>_pr.csv` and `<stem>_f1.csv` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<()> {
        self.write_json(&dir.join(format!("{stem}.json")))?;
        write_file(&dir.join(format!("{stem}_pr.csv")), self.pr_curve_csv().as_bytes())?;
        write_file(&dir.join(format!("{stem}_f1.csv")), self.f1_curve_csv().as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
