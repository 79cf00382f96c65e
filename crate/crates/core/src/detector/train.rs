//! Seeded mini-batch training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use super::loss::loss_and_gradients;
use super::network::{ModelWeights, Network};
use crate::annotations::BoxLabel;
use crate::error::{Error, Result};

/// One preprocessed slice (`image_size^2` row-major pixels) with its boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Vec<f64>,
    pub targets: Vec<BoxLabel>,
}

impl TrainSample {
    /// Mirror image about the vertical axis, boxes included.
    pub fn flipped(&self, size: usize) -> TrainSample {
        let mut image = self.image.clone();
        for row in image.chunks_exact_mut(size) {
            row.reverse();
        }
        let targets = self
            .targets
            .iter()
            .map(|b| BoxLabel::new(b.class_id, 1.0 - b.cx, b.cy, b.w, b.h))
            .collect();
        TrainSample { image, targets }
    }

    /// Shifts content by `(dx, dy)` pixels, filling uncovered pixels with 0. Boxes move with the
    /// content and are clipped to the image; boxes left with no area are dropped.
    pub fn translated(&self, size: usize, dx: i64, dy: i64) -> TrainSample {
        let n = size as i64;
        let mut image = vec![0.0; self.image.len()];
        for y in 0..n {
            let sy = y - dy;
            if !(0..n).contains(&sy) {
                continue;
            }
            for x in 0..n {
                let sx = x - dx;
                if (0..n).contains(&sx) {
                    image[(y * n + x) as usize] = self.image[(sy * n + sx) as usize];
                }
            }
        }
        let (fx, fy) = (dx as f64 / size as f64, dy as f64 / size as f64);
        let targets = self
            .targets
            .iter()
            .filter_map(|b| {
                let x0 = (b.cx - b.w / 2.0 + fx).max(0.0);
                let x1 = (b.cx + b.w / 2.0 + fx).min(1.0);
                let y0 = (b.cy - b.h / 2.0 + fy).max(0.0);
                let y1 = (b.cy + b.h / 2.0 + fy).min(1.0);
                (x1 > x0 && y1 > y0)
                    .then(|| BoxLabel::new(b.class_id, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0))
            })
            .collect();
        TrainSample { image, targets }
    }

    /// Stretches content about the image centre by `sx` horizontally and `sy` vertically with
    /// bilinear sampling (zero outside). Boxes follow and are clipped like [`Self::translated`].
    pub fn scaled(&self, size: usize, sx: f64, sy: f64) -> TrainSample {
        let n = size as f64;
        let c = n / 2.0;
        let at = |x: i64, y: i64| -> f64 {
            if x < 0 || y < 0 || x >= size as i64 || y >= size as i64 {
                0.0
            } else {
                self.image[y as usize * size + x as usize]
            }
        };
        let mut image = vec![0.0; self.image.len()];
        for y in 0..size {
            let v = (y as f64 + 0.5 - c) / sy + c - 0.5;
            let (y0, fy) = (v.floor() as i64, v - v.floor());
            for x in 0..size {
                let u = (x as f64 + 0.5 - c) / sx + c - 0.5;
                let (x0, fx) = (u.floor() as i64, u - u.floor());
                image[y * size + x] = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                    + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
            }
        }
        let targets = self
            .targets
            .iter()
            .filter_map(|b| {
                let x0 = (0.5 + (b.cx - b.w / 2.0 - 0.5) * sx).max(0.0);
                let x1 = (0.5 + (b.cx + b.w / 2.0 - 0.5) * sx).min(1.0);
                let y0 = (0.5 + (b.cy - b.h / 2.0 - 0.5) * sy).max(0.0);
                let y1 = (0.5 + (b.cy + b.h / 2.0 - 0.5) * sy).min(1.0);
                (x1 > x0 && y1 > y0)
                    .then(|| BoxLabel::new(b.class_id, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0))
            })
            .collect();
        TrainSample { image, targets }
    }

    /// Applies `v -> max(v, 0)^gamma` to every pixel; boxes are unchanged.
    pub fn gamma_adjusted(&self, gamma: f64) -> TrainSample {
        TrainSample {
            image: self.image.iter().map(|v| v.max(0.0).powf(gamma)).collect(),
            targets: self.targets.clone(),
        }
    }
}

/// Draws the augmentation for one sample; `None` leaves it untouched.
fn augment(config: &TrainConfig, sample: &TrainSample, rng: &mut ChaCha8Rng) -> Option<TrainSample> {
    let mut out = (config.horizontal_flip && rng.random_bool(0.5)).then(|| sample.flipped(config.image_size));
    if let Some([lo, hi]) = config.scale_range {
        let (sx, sy) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        out = Some(out.as_ref().unwrap_or(sample).scaled(config.image_size, sx, sy));
    }
    if config.max_shift_px > 0 {
        let t = config.max_shift_px as i64;
        let (dx, dy) = (rng.random_range(-t..=t), rng.random_range(-t..=t));
        out = Some(out.as_ref().unwrap_or(sample).translated(config.image_size, dx, dy));
    }
    if let Some([lo, hi]) = config.gamma_range {
        let gamma = (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp();
        out = Some(out.as_ref().unwrap_or(sample).gamma_adjusted(gamma));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_weights: ModelWeights,
    /// Weights at the end of the epoch with the lowest mean loss.
    pub best_weights: ModelWeights,
    pub best_epoch: usize,
    /// Mean per-sample loss for each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub batch_size: usize,
}

pub fn train(config: &TrainConfig, samples: &[TrainSample], init: Option<&ModelWeights>) -> Result<TrainOutcome> {
    train_with_observer(config, samples, init, |_, _| {})
}

/// Trains for `config.epochs` epochs, calling `observer(epoch, mean_loss)` after each.
///
/// Each epoch shuffles sample order with a generator seeded by `(seed, epoch)`, so a run is a
/// pure function of config, data and initial weights.
pub fn train_with_observer(
    config: &TrainConfig,
    samples: &[TrainSample],
    init: Option<&ModelWeights>,
    mut observer: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let net = Network::new(config)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no training slices".into()));
    }
    let pixels = config.image_size * config.image_size;
    if let Some(bad) = samples.iter().position(|s| s.image.len() != pixels) {
        return Err(Error::ShapeMismatch(format!(
            "sample {bad} has {} pixels, expected {pixels}",
            samples[bad].image.len()
        )));
    }
    let mut weights = match init {
        Some(w) => {
            w.check_layout(config)?;
            w.check_finite()?;
            w.clone()
        }
        None => ModelWeights::init(config, config.seed),
    };
    let batch_size = config.batch_size.min(samples.len());
    if batch_size < config.batch_size {
        log::warn!(
            "batch size reduced from {} to the dataset size {}",
            config.batch_size,
            samples.len()
        );
    }
    let mut state = AdamState::new(&weights);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, weights.clone());
    let mut steps = 0;
    let start_epoch = weights.epoch;
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        order.shuffle(&mut rng);
        let epoch_config = TrainConfig {
            learning_rate: config.learning_rate * config.lr_schedule.factor(epoch, config.epochs),
            ..config.clone()
        };
        let mut epoch_sum = 0.0;
        for batch in order.chunks(batch_size) {
            let augmented: Vec<Option<TrainSample>> =
                batch.iter().map(|&k| augment(config, &samples[k], &mut rng)).collect();
            let chosen: Vec<&TrainSample> = batch
                .iter()
                .zip(&augmented)
                .map(|(&k, f)| f.as_ref().unwrap_or(&samples[k]))
                .collect();
            let images: Vec<&[f64]> = chosen.iter().map(|s| s.image.as_slice()).collect();
            let targets: Vec<&[BoxLabel]> = chosen.iter().map(|s| s.targets.as_slice()).collect();
            let (loss, grads) = match loss_and_gradients(&net, &weights, config, &images, &targets) {
                Ok(v) => v,
                Err(Error::NonFiniteActivation(_)) => return Err(Error::DivergedTraining { epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::DivergedTraining { epoch });
            }
            match adam_step(&mut weights, &grads, &mut state, &epoch_config) {
                Ok(()) => {}
                Err(Error::NonFiniteUpdate(_)) => return Err(Error::DivergedTraining { epoch }),
                Err(e) => return Err(e),
            }
            steps += 1;
            epoch_sum += loss * batch.len() as f64;
        }
        weights.epoch = start_epoch + epoch as u32 + 1;
        let mean = epoch_sum / samples.len() as f64;
        epoch_losses.push(mean);
        if mean < best.0 {
            best = (mean, epoch, weights.clone());
        }
        observer(epoch, mean);
    }
    Ok(TrainOutcome {
        final_weights: weights,
        best_weights: best.2,
        best_epoch: best.1,
        epoch_losses,
        steps,
        batch_size,
    })
}
