use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative weights of the detection loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub box_: f64,
    pub obj: f64,
    pub noobj: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            box_: 5.0,
            obj: 1.0,
            noobj: 0.5,
            cls: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecayMode {
    /// `w -= lr * wd * w` applied outside the adaptive step.
    #[default]
    Decoupled,
    /// `g += wd * w` before the moment updates.
    L2,
}

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from 1 at the first epoch down to `min_factor` after the last.
    Cosine { min_factor: f64 },
}

impl LrSchedule {
    /// Multiplier for zero-based `epoch` out of `epochs`.
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { min_factor } => {
                let t = epoch as f64 / epochs.max(1) as f64;
                min_factor + (1.0 - min_factor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Optimizer, schedule and architecture settings for the grid detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Adam first-moment decay (the "momentum").
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecayMode,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Cells per side of the output grid.
    pub grid_size: usize,
    /// Input side length in pixels; slices are resized to this.
    pub image_size: usize,
    pub boxes_per_cell: usize,
    /// Output channels of the stride-2 conv blocks.
    pub channels: Vec<usize>,
    /// Width and height prior for decoded boxes, as a fraction of the image.
    pub anchor: f64,
    pub loss_weights: LossWeights,
    pub horizontal_flip: bool,
    /// Per-sample intensity gamma drawn log-uniformly from `[lo, hi]`.
    pub gamma_range: Option<[f64; 2]>,
    /// Per-sample translation drawn uniformly from `[-max_shift_px, max_shift_px]` on each axis.
    pub max_shift_px: usize,
    /// Per-sample horizontal and vertical stretch, each drawn uniformly from `[lo, hi]`.
    pub scale_range: Option<[f64; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 120,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.00005,
            weight_decay_mode: WeightDecayMode::Decoupled,
            epochs: 100,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            grid_size: 8,
            image_size: 256,
            boxes_per_cell: 1,
            channels: vec![16, 32, 64, 64],
            anchor: 0.3,
            loss_weights: LossWeights::default(),
            horizontal_flip: false,
            gamma_range: None,
            max_shift_px: 0,
            scale_range: None,
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.1;
/// Single foreground class (kidney).
pub const NUM_CLASSES: usize = 1;
/// t_x, t_y, t_w, t_h, t_obj, then class logits.
pub const OUTPUTS_PER_CELL: usize = 5 + NUM_CLASSES;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("epsilon must be positive and weight_decay non-negative".into());
        }
        if let LrSchedule::Cosine { min_factor } = self.lr_schedule {
            if !(0.0..=1.0).contains(&min_factor) {
                return bad(format!("cosine min_factor {min_factor} outside [0, 1]"));
            }
        }
        if let Some([lo, hi]) = self.gamma_range {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("gamma_range [{lo}, {hi}]"));
            }
        }
        if let Some([lo, hi]) = self.scale_range {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("scale_range [{lo}, {hi}]"));
            }
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if self.grid_size < 1 || self.image_size % self.grid_size != 0 {
            return bad(format!(
                "image_size {} must be divisible by grid_size {}",
                self.image_size, self.grid_size
            ));
        }
        if self.boxes_per_cell != 1 {
            return bad(format!("boxes_per_cell {} unsupported (only 1)", self.boxes_per_cell));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad(format!("channels {:?}", self.channels));
        }
        if self.feature_size() < 1 {
            return bad("image too small for the conv stack".into());
        }
        if !(self.anchor > 0.0 && self.anchor <= 1.0) {
            return bad(format!("anchor {}", self.anchor));
        }
        let lw = &self.loss_weights;
        if [lw.box_, lw.obj, lw.noobj, lw.cls].iter().any(|v| !(*v >= 0.0)) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }

    /// Side length of the last conv feature map (each block halves, rounding up).
    pub fn feature_size(&self) -> usize {
        self.channels.iter().fold(self.image_size, |n, _| n.div_ceil(2))
    }

    /// Architecture identity; warm starts require equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        let desc = format!(
            "grid-detector;image={};grid={};b={};classes={};channels={:?};anchor={};leaky={}",
            self.image_size, self.grid_size, self.boxes_per_cell, NUM_CLASSES, self.channels, self.anchor, LEAKY_SLOPE
        );
        // FNV-1a
        desc.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
