use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;

/// Metric that ranks primary models; ties fall through PPV, sensitivity, then lowest id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Map50,
    Ppv,
    Sensitivity,
    F1,
}

/// Which primary model initializes each final model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStartSource {
    /// Each benchmark continues from its own primary.
    #[default]
    PerBenchmark,
    /// Every benchmark continues from the selected best primary.
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainPlan {
    pub n_benchmarks: u32,
    pub test_fraction: f64,
    pub selection_metric: SelectionMetric,
    pub pseudo_conf_threshold: f64,
    pub max_pseudo_boxes_per_slice: usize,
    pub pseudo_nms_iou: f64,
    /// Drop every series of a benchmark's test patients from its final training set.
    pub exclude_test_linked: bool,
    pub warm_start: bool,
    pub warm_start_source: WarmStartSource,
    /// Epochs for the final models; the training config's epochs when unset.
    pub final_epochs: Option<usize>,
    /// Keep box-free slices as negatives during training.
    pub include_empty_slices: bool,
    /// Lowest confidence kept when predicting for evaluation, so curves span the full range.
    pub eval_min_conf: f64,
    /// Boxes kept per slice when predicting for evaluation.
    pub eval_max_boxes: usize,
    pub seed: u64,
}

impl Default for SelfTrainPlan {
    fn default() -> Self {
        SelfTrainPlan {
            n_benchmarks: 10,
            test_fraction: 0.2,
            selection_metric: SelectionMetric::Map50,
            pseudo_conf_threshold: 0.25,
            max_pseudo_boxes_per_slice: 2,
            pseudo_nms_iou: 0.45,
            exclude_test_linked: true,
            warm_start: true,
            warm_start_source: WarmStartSource::PerBenchmark,
            final_epochs: None,
            include_empty_slices: true,
            eval_min_conf: 0.001,
            eval_max_boxes: 2,
            seed: 0,
        }
    }
}

impl SelfTrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_benchmarks == 0 {
            return Err(Error::InvalidConfig("n_benchmarks must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        for (name, v) in [
            ("pseudo_conf_threshold", self.pseudo_conf_threshold),
            ("pseudo_nms_iou", self.pseudo_nms_iou),
            ("eval_min_conf", self.eval_min_conf),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.max_pseudo_boxes_per_slice == 0 || self.eval_max_boxes == 0 {
            return Err(Error::InvalidConfig("box limits must be at least 1".into()));
        }
        if self.final_epochs == Some(0) {
            return Err(Error::InvalidConfig("final_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Headline numbers of one report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub ppv: f64,
    pub sensitivity: f64,
    pub map50: f64,
    pub f1_best: f64,
    pub conf_at_f1_best: f64,
}

impl From<&MetricsReport> for MetricsSummary {
    fn from(r: &MetricsReport) -> Self {
        MetricsSummary {
            ppv: r.ppv,
            sensitivity: r.sensitivity,
            map50: r.map50,
            f1_best: r.f1_best,
            conf_at_f1_best: r.conf_at_f1_best,
        }
    }
}

impl MetricsSummary {
    fn metric(&self, m: SelectionMetric) -> f64 {
        match m {
            SelectionMetric::Map50 => self.map50,
            SelectionMetric::Ppv => self.ppv,
            SelectionMetric::Sensitivity => self.sensitivity,
            SelectionMetric::F1 => self.f1_best,
        }
    }
}

/// Highest `metric`, then PPV, then sensitivity, then lowest benchmark id. `None` when empty.
pub fn select_best(candidates: &[(u32, MetricsSummary)], metric: SelectionMetric) -> Option<u32> {
    let key = |s: &MetricsSummary| (s.metric(metric), s.ppv, s.sensitivity);
    candidates
        .iter()
        .min_by(|(ia, a), (ib, b)| {
            let (ka, kb) = (key(a), key(b));
            kb.0.total_cmp(&ka.0)
                .then(kb.1.total_cmp(&ka.1))
                .then(kb.2.total_cmp(&ka.2))
                .then(ia.cmp(ib))
        })
        .map(|(id, _)| *id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(map50: f64, ppv: f64, sensitivity: f64) -> MetricsSummary {
        MetricsSummary {
            ppv,
            sensitivity,
            map50,
            f1_best: 0.0,
            conf_at_f1_best: 0.0,
        }
    }

    #[test]
    fn identical_reports_pick_lowest_id() {
        let c: Vec<_> = (1..=10).rev().map(|id| (id, summary(0.9, 0.9, 0.9))).collect();
        assert_eq!(select_best(&c, SelectionMetric::Map50), Some(1));
        assert_eq!(select_best(&[], SelectionMetric::Map50), None);
    }

    #[test]
    fn metric_order() {
        let c = [(1, summary(0.9, 0.99, 0.5)), (2, summary(0.91, 0.5, 0.5))];
        assert_eq!(select_best(&c, SelectionMetric::Map50), Some(2));
        assert_eq!(select_best(&c, SelectionMetric::Ppv), Some(1));
    }

    #[test]
    fn plan_validation() {
        assert!(SelfTrainPlan::default().validate().is_ok());
        assert!(SelfTrainPlan { test_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(SelfTrainPlan { pseudo_conf_threshold: 1.5, ..Default::default() }.validate().is_err());
    }
}
