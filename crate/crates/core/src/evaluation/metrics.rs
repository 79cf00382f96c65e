//! Counts, precision/recall, average precision and the F1 sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrMetrics {
    pub ppv: f64,
    pub sensitivity: f64,
    /// Set when there were no predictions and `ppv` was defined as 1.
    pub degenerate_ppv: bool,
}

/// PPV is 1 (flagged degenerate) with no predictions; sensitivity is 1 with no ground truth.
pub fn pr_metrics(tp: usize, fp: usize, n_gt: usize) -> PrMetrics {
    let degenerate_ppv = tp + fp == 0;
    let ppv = if degenerate_ppv { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let sensitivity = if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 };
    PrMetrics {
        ppv,
        sensitivity,
        degenerate_ppv,
    }
}

pub fn f1(ppv: f64, sensitivity: f64) -> f64 {
    if ppv + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * ppv * sensitivity / (ppv + sensitivity)
    }
}

/// One prediction after matching: its confidence and whether it was a true positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub confidence: f64,
    pub tp: bool,
}

/// TP and FP among predictions with confidence at or above `threshold`.
pub fn counts_at(scored: &[Scored], n_gt: usize, threshold: f64) -> Counts {
    let (mut tp, mut fp) = (0, 0);
    for s in scored.iter().filter(|s| s.confidence >= threshold) {
        if s.tp {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    Counts { tp, fp, fn_: n_gt - tp }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApConvention {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

/// `(recall, precision)` at each distinct confidence, from the highest down.
///
/// Predictions sharing a confidence enter together, so the curve only has points that some
/// threshold can actually realize.
pub fn pr_curve(scored: &[Scored], n_gt: usize) -> Vec<(f64, f64)> {
    let mut sorted: Vec<Scored> = scored.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let c = sorted[k].confidence;
        while k < sorted.len() && sorted[k].confidence == c {
            if sorted[k].tp {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        out.push((recall, tp as f64 / (tp + fp) as f64));
    }
    out
}

/// Average precision of a globally ranked prediction list.
pub fn average_precision(scored: &[Scored], n_gt: usize, convention: ApConvention) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::ZeroGroundTruth);
    }
    let curve = pr_curve(scored, n_gt);
    // envelope[k] = max precision over points k.. (recall is non-decreasing along the curve)
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let ap = match convention {
        ApConvention::AllPoint => {
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (k, &(r, _)) in curve.iter().enumerate() {
                area += (r - prev_recall) * envelope[k];
                prev_recall = r;
            }
            area
        }
        ApConvention::ElevenPoint => {
            let mut total = 0.0;
            for step in 0..=10 {
                let r = step as f64 / 10.0;
                total += curve
                    .iter()
                    .zip(&envelope)
                    .find(|((rec, _), _)| *rec >= r)
                    .map(|(_, &e)| e)
                    .unwrap_or(0.0);
            }
            total / 11.0
        }
    };
    Ok(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Sweep {
    /// `(confidence, f1)` at every grid point.
    pub curve: Vec<(f64, f64)>,
    pub best: f64,
    /// Lowest grid confidence attaining `best`.
    pub conf_at_best: f64,
}

/// F1 at confidences `k / steps` for `k = 0..=steps`.
pub fn f1_sweep(scored: &[Scored], n_gt: usize, steps: usize) -> F1Sweep {
    let mut curve = Vec::with_capacity(steps + 1);
    let (mut best, mut conf_at_best) = (f64::NEG_INFINITY, 0.0);
    for k in 0..=steps {
        let c = k as f64 / steps as f64;
        let counts = counts_at(scored, n_gt, c);
        let m = pr_metrics(counts.tp, counts.fp, n_gt);
        let value = f1(m.ppv, m.sensitivity);
        if value > best {
            best = value;
            conf_at_best = c;
        }
        curve.push((c, value));
    }
    F1Sweep {
        curve,
        best,
        conf_at_best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(confidence: f64, tp: bool) -> Scored {
        Scored { confidence, tp }
    }

    #[test]
    fn pr_metric_examples() {
        let m = pr_metrics(2, 1, 2);
        assert!((m.ppv - 2.0 / 3.0).abs() < 1e-15 && m.sensitivity == 1.0 && !m.degenerate_ppv);
        let m = pr_metrics(0, 0, 5);
        assert!(m.degenerate_ppv && m.ppv == 1.0 && m.sensitivity == 0.0);
        let m = pr_metrics(4, 0, 4);
        assert_eq!((m.ppv, m.sensitivity), (1.0, 1.0));
    }

    #[test]
    fn ap_hand_trace() {
        let scored = [s(0.9, true), s(0.8, false), s(0.7, true)];
        let ap = average_precision(&scored, 2, ApConvention::AllPoint).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn ap_extremes() {
        let perfect = [s(0.9, true), s(0.5, true)];
        assert_eq!(average_precision(&perfect, 2, ApConvention::AllPoint).unwrap(), 1.0);
        assert_eq!(average_precision(&perfect, 2, ApConvention::ElevenPoint).unwrap(), 1.0);
        let null = [s(0.9, false), s(0.5, false)];
        assert_eq!(average_precision(&null, 2, ApConvention::AllPoint).unwrap(), 0.0);
        assert!(matches!(average_precision(&perfect, 0, ApConvention::AllPoint), Err(Error::ZeroGroundTruth)));
    }

    #[test]
    fn eleven_point_hand_trace() {
        // recall 0.5 at precision 1, recall 1 at precision 2/3
        let scored = [s(0.9, true), s(0.8, false), s(0.7, true)];
        let ap = average_precision(&scored, 2, ApConvention::ElevenPoint).unwrap();
        assert!((ap - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
    }

    #[test]
    fn tied_confidences_enter_together() {
        let scored = [s(0.8, false), s(0.8, true)];
        assert_eq!(pr_curve(&scored, 1), vec![(1.0, 0.5)]);
        assert_eq!(average_precision(&scored, 1, ApConvention::AllPoint).unwrap(), 0.5);
    }

    #[test]
    fn f1_values() {
        assert!((f1(0.97, 0.92) - 0.9443).abs() < 5e-5);
        assert_eq!(f1(0.0, 0.0), 0.0);
        let perfect = [s(0.6, true), s(0.75, true)];
        let sweep = f1_sweep(&perfect, 2, 100);
        assert_eq!(sweep.curve.len(), 101);
        assert!(sweep.curve.iter().filter(|(c, _)| *c <= 0.6).all(|(_, f)| *f == 1.0));
        assert_eq!((sweep.best, sweep.conf_at_best), (1.0, 0.0));
        assert_eq!(sweep.curve[45].0, 0.45);
    }

    #[test]
    fn f1_peak_inside_range() {
        let scored = [s(0.95, true), s(0.9, true), s(0.5, true), s(0.4, false), s(0.3, false), s(0.2, true)];
        let sweep = f1_sweep(&scored, 4, 100);
        // thresholds in (0.4, 0.5] keep 3 TP and 0 FP: f1 = 2*1*0.75/1.75
        assert!((sweep.best - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(sweep.conf_at_best, 0.41);
    }

    #[test]
    fn counts_monotone_in_threshold() {
        let scored = [s(0.9, true), s(0.4, false), s(0.6, true), s(0.1, false)];
        let mut prev = counts_at(&scored, 3, 0.0);
        for k in 1..=100 {
            let c = counts_at(&scored, 3, k as f64 / 100.0);
            assert!(c.tp <= prev.tp && c.fp <= prev.fp && c.fn_ >= prev.fn_);
            assert_eq!(c.tp + c.fn_, 3);
            prev = c;
        }
    }
}
