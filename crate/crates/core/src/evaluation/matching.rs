//! Greedy one-to-one matching of detections to ground truth.

use crate::annotations::{BoxLabel, Detection};

/// Per-prediction true-positive flags (input order) and, per ground-truth box, the index of
/// the prediction that claimed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub pred_tp: Vec<bool>,
    pub gt_match: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.pred_tp.iter().filter(|&&t| t).count()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_match.iter().filter(|m| m.is_none()).count()
    }
}

/// Processing order for matching: descending confidence, then larger best IoU, then input order.
pub fn matching_order(preds: &[Detection], gts: &[BoxLabel]) -> Vec<usize> {
    let best_iou: Vec<f64> = preds
        .iter()
        .map(|p| gts.iter().map(|g| p.bbox.iou(g)).fold(0.0, f64::max))
        .collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then(best_iou[b].total_cmp(&best_iou[a]))
            .then(a.cmp(&b))
    });
    order
}

/// Each prediction, in [`matching_order`], claims the unmatched ground-truth box with the
/// highest IoU provided that IoU is at least `iou_threshold`; otherwise it is a false positive.
pub fn match_detections(preds: &[Detection], gts: &[BoxLabel], iou_threshold: f64) -> MatchResult {
    let mut pred_tp = vec![false; preds.len()];
    let mut gt_match = vec![None; gts.len()];
    for p in matching_order(preds, gts) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_match[g].is_some() {
                continue;
            }
            let iou = preds[p].bbox.iou(gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            gt_match[g] = Some(p);
            pred_tp[p] = true;
        }
    }
    MatchResult { pred_tp, gt_match }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(cx: f64, cy: f64, w: f64, h: f64, c: f64) -> Detection {
        Detection::new(BoxLabel::new(0, cx, cy, w, h), c)
    }

    #[test]
    fn duplicate_is_false_positive() {
        let gt = [BoxLabel::new(0, 0.5, 0.5, 0.2, 0.2)];
        let preds = [det(0.51, 0.5, 0.2, 0.2, 0.8), det(0.5, 0.5, 0.2, 0.2, 0.9)];
        let m = match_detections(&preds, &gt, 0.5);
        assert_eq!(m.pred_tp, vec![false, true]);
        assert_eq!(m.gt_match, vec![Some(1)]);
    }

    #[test]
    fn no_predictions_all_missed() {
        let gt = [BoxLabel::new(0, 0.2, 0.2, 0.1, 0.1), BoxLabel::new(0, 0.7, 0.7, 0.1, 0.1)];
        let m = match_detections(&[], &gt, 0.5);
        assert_eq!(m.false_negatives(), 2);
    }

    #[test]
    fn threshold_is_inclusive_and_strict_below() {
        // Same height, shifted horizontally: IoU = (w - d) / (w + d).
        let gt = BoxLabel::new(0, 0.5, 0.5, 0.3, 0.2);
        let shift_for = |iou: f64| 0.3 * (1.0 - iou) / (1.0 + iou);
        let below = det(0.5 + shift_for(0.49), 0.5, 0.3, 0.2, 0.9);
        assert!(below.bbox.iou(&gt) < 0.5);
        assert_eq!(match_detections(&[below], &[gt], 0.5).pred_tp, vec![false]);
        let wide = BoxLabel::new(0, 0.5, 0.5, 0.5, 0.25);
        let exact = det(0.5, 0.5, 0.25, 0.25, 0.9);
        assert_eq!(exact.bbox.iou(&wide), 0.5);
        assert_eq!(match_detections(&[exact], &[wide], 0.5).pred_tp, vec![true]);
    }

    #[test]
    fn equal_confidence_prefers_better_overlap() {
        let gt = [BoxLabel::new(0, 0.5, 0.5, 0.2, 0.2)];
        let preds = [det(0.53, 0.5, 0.2, 0.2, 0.7), det(0.5, 0.5, 0.2, 0.2, 0.7)];
        assert_eq!(match_detections(&preds, &gt, 0.5).pred_tp, vec![false, true]);
    }

    fn arb_box() -> impl Strategy<Value = BoxLabel> {
        (0.05f64..0.95, 0.05f64..0.95, 0.02f64..0.3, 0.02f64..0.3).prop_map(|(x, y, w, h)| {
            let w = w.min(2.0 * x.min(1.0 - x));
            let h = h.min(2.0 * y.min(1.0 - y));
            BoxLabel::new(0, x, y, w, h)
        })
    }

    proptest! {
        #[test]
        fn one_to_one(gts in proptest::collection::vec(arb_box(), 0..6),
                      preds in proptest::collection::vec((arb_box(), 0.0f64..1.0), 0..6)) {
            let preds: Vec<Detection> = preds.into_iter().map(|(b, c)| Detection::new(b, c)).collect();
            let m = match_detections(&preds, &gts, 0.3);
            let claimed: Vec<usize> = m.gt_match.iter().flatten().copied().collect();
            let mut unique = claimed.clone();
            unique.sort();
            unique.dedup();
            prop_assert_eq!(unique.len(), claimed.len());
            prop_assert_eq!(claimed.len(), m.true_positives());
            for (g, p) in m.gt_match.iter().enumerate() {
                if let Some(p) = p {
                    prop_assert!(m.pred_tp[*p]);
                    prop_assert!(preds[*p].bbox.iou(&gts[g]) >= 0.3);
                }
            }
        }
    }
}
