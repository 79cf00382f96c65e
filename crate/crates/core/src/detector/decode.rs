//! Grid decoding, greedy NMS and the end-to-end predict call.

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, OUTPUTS_PER_CELL};
use super::loss::sigmoid;
use super::network::{GridPrediction, ModelWeights, Network};
use crate::annotations::{BoxLabel, Detection};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub max_boxes: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            conf_threshold: 0.25,
            nms_iou: 0.45,
            max_boxes: 2,
        }
    }
}

/// Smallest decoded width/height, keeps boxes valid when `exp` underflows.
const MIN_SIZE: f64 = 1e-6;

/// Decodes every cell into a detection, clipped to the image.
pub fn decode_grid(pred: &GridPrediction, anchor: f64) -> Vec<Detection> {
    let s = pred.grid as f64;
    let mut out = Vec::with_capacity(pred.grid * pred.grid);
    for i in 0..pred.grid {
        for j in 0..pred.grid {
            let o = pred.cell(i, j);
            debug_assert_eq!(o.len(), OUTPUTS_PER_CELL);
            let cx = (j as f64 + sigmoid(o[0])) / s;
            let cy = (i as f64 + sigmoid(o[1])) / s;
            let w = (o[2].exp() * anchor).clamp(MIN_SIZE, 1.0);
            let h = (o[3].exp() * anchor).clamp(MIN_SIZE, 1.0);
            let logits = &o[5..];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let (class_id, p_cls) = logits
                .iter()
                .enumerate()
                .map(|(k, z)| (k, (z - max).exp() / denom))
                .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
            let x0 = (cx - 0.5 * w).max(0.0);
            let y0 = (cy - 0.5 * h).max(0.0);
            let x1 = (cx + 0.5 * w).min(1.0);
            let y1 = (cy + 0.5 * h).min(1.0);
            let bbox = BoxLabel::from_corners(class_id as u32, x0, y0, x1.max(x0 + MIN_SIZE), y1.max(y0 + MIN_SIZE));
            out.push(Detection::new(bbox, (sigmoid(o[4]) * p_cls).clamp(0.0, 1.0)));
        }
    }
    out
}

/// Greedy non-maximum suppression: keeps boxes in descending confidence whose IoU with
/// every kept box is below `iou_threshold`. Equal confidences keep input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let d = dets[idx];
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Threshold, NMS and top-k over one decoded grid.
pub fn postprocess(pred: &GridPrediction, anchor: f64, opts: &PredictOptions) -> Vec<Detection> {
    let candidates: Vec<Detection> = decode_grid(pred, anchor)
        .into_iter()
        .filter(|d| d.confidence >= opts.conf_threshold)
        .collect();
    let mut kept = nms(&candidates, opts.nms_iou);
    kept.truncate(opts.max_boxes);
    kept
}

/// Runs the detector over images sized `image_size x image_size`.
pub fn predict(weights: &ModelWeights, config: &TrainConfig, images: &[Vec<f64>], opts: &PredictOptions) -> Result<Vec<Vec<Detection>>> {
    weights.check_layout(config)?;
    let net = Network::new(config)?;
    images
        .iter()
        .map(|img| {
            let cache = net.forward(weights, img)?;
            Ok(postprocess(&net.head_to_grid(&cache.head), config.anchor, opts))
        })
        .collect()
}
