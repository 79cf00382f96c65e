//! Composite detection loss on the S x S grid and its analytic gradient.

use super::config::{TrainConfig, NUM_CLASSES, OUTPUTS_PER_CELL};
use super::network::{GridPrediction, ModelWeights, Network};
use crate::annotations::BoxLabel;
use crate::error::Result;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Regression targets for one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub i: usize,
    pub j: usize,
    /// Offset of the centre inside the cell, in [0, 1).
    pub tx: f64,
    pub ty: f64,
    /// Log-size relative to the anchor prior.
    pub tw: f64,
    pub th: f64,
    pub class_id: usize,
}

/// Assigns each box to the cell containing its centre; a cell keeps only its
/// largest box (ties resolved by input order).
pub fn assign_targets(targets: &[BoxLabel], grid: usize, anchor: f64) -> Vec<CellTarget> {
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| targets[b].area().total_cmp(&targets[a].area()).then(a.cmp(&b)));
    let mut taken = vec![false; grid * grid];
    let mut out = Vec::new();
    let s = grid as f64;
    for idx in order {
        let t = &targets[idx];
        let j = ((t.cx * s).floor().max(0.0) as usize).min(grid - 1);
        let i = ((t.cy * s).floor().max(0.0) as usize).min(grid - 1);
        if taken[i * grid + j] {
            continue;
        }
        taken[i * grid + j] = true;
        out.push(CellTarget {
            i,
            j,
            tx: t.cx * s - j as f64,
            ty: t.cy * s - i as f64,
            tw: (t.w / anchor).ln(),
            th: (t.h / anchor).ln(),
            class_id: (t.class_id as usize).min(NUM_CLASSES - 1),
        });
    }
    out
}

/// Loss value and its gradient with respect to every raw output.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: GridPrediction,
}

/// Box regression + objectness BCE + no-object BCE + class cross-entropy, summed over cells.
pub fn detection_loss(pred: &GridPrediction, targets: &[BoxLabel], config: &TrainConfig) -> LossOutput {
    let s = pred.grid;
    let lw = config.loss_weights;
    let assigned = assign_targets(targets, s, config.anchor);
    let mut owner: Vec<Option<&CellTarget>> = vec![None; s * s];
    for t in &assigned {
        owner[t.i * s + t.j] = Some(t);
    }
    let mut grad = vec![0.0; pred.values.len()];
    let mut value = 0.0;
    for (cell, target) in owner.iter().enumerate() {
        let o = &pred.values[cell * OUTPUTS_PER_CELL..(cell + 1) * OUTPUTS_PER_CELL];
        let g = &mut grad[cell * OUTPUTS_PER_CELL..(cell + 1) * OUTPUTS_PER_CELL];
        match target {
            None => {
                value += lw.noobj * softplus(o[4]);
                g[4] = lw.noobj * sigmoid(o[4]);
            }
            Some(t) => {
                let (sx, sy) = (sigmoid(o[0]), sigmoid(o[1]));
                let (ex, ey, ew, eh) = (sx - t.tx, sy - t.ty, o[2] - t.tw, o[3] - t.th);
                value += lw.box_ * (ex * ex + ey * ey + ew * ew + eh * eh);
                g[0] = lw.box_ * 2.0 * ex * sx * (1.0 - sx);
                g[1] = lw.box_ * 2.0 * ey * sy * (1.0 - sy);
                g[2] = lw.box_ * 2.0 * ew;
                g[3] = lw.box_ * 2.0 * eh;

                value += lw.obj * softplus(-o[4]);
                g[4] = lw.obj * (sigmoid(o[4]) - 1.0);

                let logits = &o[5..];
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = logits.iter().map(|z| (z - max).exp()).sum();
                value += lw.cls * (max + denom.ln() - logits[t.class_id]);
                for (k, z) in logits.iter().enumerate() {
                    let p = (z - max).exp() / denom;
                    g[5 + k] = lw.cls * (p - if k == t.class_id { 1.0 } else { 0.0 });
                }
            }
        }
    }
    LossOutput {
        value,
        grad: GridPrediction { grid: s, values: grad },
    }
}

/// Mean loss over a batch and the gradient for every parameter tensor.
pub fn loss_and_gradients(
    net: &Network,
    weights: &ModelWeights,
    config: &TrainConfig,
    images: &[&[f64]],
    targets: &[&[BoxLabel]],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads = weights.zeros_like();
    let mut total = 0.0;
    let scale = 1.0 / images.len().max(1) as f64;
    let s = net.grid;
    let mut d_head = vec![0.0; OUTPUTS_PER_CELL * s * s];
    for (img, tgt) in images.iter().zip(targets) {
        let cache = net.forward(weights, img)?;
        let pred = net.head_to_grid(&cache.head);
        let out = detection_loss(&pred, tgt, config);
        total += out.value;
        for c in 0..OUTPUTS_PER_CELL {
            for cell in 0..s * s {
                d_head[c * s * s + cell] = out.grad.values[cell * OUTPUTS_PER_CELL + c] * scale;
            }
        }
        net.backward(weights, &cache, &d_head, &mut grads);
    }
    Ok((total * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            grid_size: 4,
            image_size: 32,
            channels: vec![4, 4, 4],
            ..Default::default()
        }
    }

    fn perfect_prediction(target: &BoxLabel, config: &TrainConfig) -> GridPrediction {
        let s = config.grid_size;
        let mut values = vec![0.0; s * s * OUTPUTS_PER_CELL];
        for cell in 0..s * s {
            values[cell * OUTPUTS_PER_CELL + 4] = -20.0;
        }
        let t = assign_targets(&[*target], s, config.anchor)[0];
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let c = &mut values[(t.i * s + t.j) * OUTPUTS_PER_CELL..][..OUTPUTS_PER_CELL];
        c[0] = logit(t.tx);
        c[1] = logit(t.ty);
        c[2] = t.tw;
        c[3] = t.th;
        c[4] = 20.0;
        c[5] = 20.0;
        GridPrediction { grid: s, values }
    }

    #[test]
    fn perfect_fit_is_near_zero() {
        let config = cfg();
        let target = BoxLabel::new(0, 0.3, 0.6, 0.25, 0.2);
        let pred = perfect_prediction(&target, &config);
        let out = detection_loss(&pred, &[target], &config);
        assert!(out.value >= 0.0 && out.value < 1e-6, "{}", out.value);
    }

    #[test]
    fn perfect_negative_is_near_zero() {
        let config = cfg();
        let s = config.grid_size;
        let mut values = vec![0.0; s * s * OUTPUTS_PER_CELL];
        for cell in 0..s * s {
            values[cell * OUTPUTS_PER_CELL + 4] = -20.0;
        }
        let out = detection_loss(&GridPrediction { grid: s, values }, &[], &config);
        assert!(out.value < 1e-6);
    }

    #[test]
    fn crowded_cell_keeps_largest_box() {
        let small = BoxLabel::new(0, 0.1, 0.1, 0.05, 0.05);
        let large = BoxLabel::new(0, 0.12, 0.12, 0.2, 0.2);
        let a = assign_targets(&[small, large], 4, 0.3);
        assert_eq!(a.len(), 1);
        assert!((a[0].tw - (0.2f64 / 0.3).ln()).abs() < 1e-12);
    }

    #[test]
    fn output_gradient_matches_finite_differences() {
        let config = cfg();
        let s = config.grid_size;
        let values: Vec<f64> = (0..s * s * OUTPUTS_PER_CELL).map(|i| ((i * 37) % 23) as f64 / 11.0 - 1.0).collect();
        let pred = GridPrediction { grid: s, values };
        let targets = [BoxLabel::new(0, 0.3, 0.6, 0.25, 0.2), BoxLabel::new(0, 0.8, 0.1, 0.1, 0.15)];
        let out = detection_loss(&pred, &targets, &config);
        let eps = 1e-6;
        for k in 0..pred.values.len() {
            let mut p = pred.clone();
            p.values[k] += eps;
            let up = detection_loss(&p, &targets, &config).value;
            p.values[k] -= 2.0 * eps;
            let down = detection_loss(&p, &targets, &config).value;
            let numeric = (up - down) / (2.0 * eps);
            assert!((numeric - out.grad.values[k]).abs() < 1e-6, "k={k}");
        }
    }
}
