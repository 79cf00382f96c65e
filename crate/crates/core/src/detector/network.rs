//! Reference conv net: stride-2 3x3 blocks with leaky ReLU, adaptive average pooling
//! onto the S x S grid, and a 1x1 head with six outputs per cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{TrainConfig, LEAKY_SLOPE, OUTPUTS_PER_CELL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Named parameter tensors plus the architecture fingerprint and epoch counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub tensors: Vec<Tensor>,
    pub fingerprint: u64,
    pub epoch: u32,
}

impl ModelWeights {
    /// All-zero parameters with the layout implied by `config`.
    pub fn zeros(config: &TrainConfig) -> Self {
        let mut tensors = Vec::new();
        let mut in_c = 1;
        for (l, &out_c) in config.channels.iter().enumerate() {
            tensors.push(Tensor::zeros(format!("conv{l}.weight"), vec![out_c, in_c, 3, 3]));
            tensors.push(Tensor::zeros(format!("conv{l}.bias"), vec![out_c]));
            in_c = out_c;
        }
        tensors.push(Tensor::zeros("head.weight", vec![OUTPUTS_PER_CELL, in_c]));
        tensors.push(Tensor::zeros("head.bias", vec![OUTPUTS_PER_CELL]));
        ModelWeights {
            tensors,
            fingerprint: config.fingerprint(),
            epoch: 0,
        }
    }

    /// He-normal conv kernels, small head weights, objectness bias at -2.
    pub fn init(config: &TrainConfig, seed: u64) -> Self {
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut w.tensors {
            if t.name.ends_with(".weight") {
                let fan_in: usize = t.shape[1..].iter().product();
                let std = if t.name.starts_with("head") {
                    0.01
                } else {
                    (2.0 / fan_in as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("finite std");
                for v in &mut t.data {
                    *v = normal.sample(&mut rng);
                }
            } else if t.name == "head.bias" {
                t.data[4] = -2.0;
            }
        }
        w
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteUpdate(t.name.clone()));
            }
        }
        Ok(())
    }

    /// Checks names and shapes against the layout `config` expects.
    pub fn check_layout(&self, config: &TrainConfig) -> Result<()> {
        let expected = config.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                found: self.fingerprint,
            });
        }
        let reference = Self::zeros(config);
        if reference.tensors.len() != self.tensors.len()
            || reference
                .tensors
                .iter()
                .zip(&self.tensors)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::ShapeMismatch("weight tensors do not match the configured architecture".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    in_c: usize,
    out_c: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

/// Architecture derived from a [`TrainConfig`].
#[derive(Debug, Clone)]
pub struct Network {
    convs: Vec<ConvShape>,
    pub image_size: usize,
    pub grid: usize,
    feat: usize,
    bins: Vec<(usize, usize)>,
}

/// Intermediate activations of one forward pass, kept for backprop.
pub struct ForwardCache {
    /// Each block's post-activation map.
    acts: Vec<Vec<f64>>,
    /// Patch matrix of each block's input.
    cols: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    /// Head outputs, channel-major `[c][i][j]`.
    pub head: Vec<f64>,
}

impl Network {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let (mut h, mut c) = (config.image_size, 1);
        for &out_c in &config.channels {
            let out = h.div_ceil(2);
            convs.push(ConvShape {
                in_c: c,
                out_c,
                in_h: h,
                in_w: h,
                out_h: out,
                out_w: out,
            });
            h = out;
            c = out_c;
        }
        let s = config.grid_size;
        let bins = (0..s).map(|i| ((i * h) / s, ((i + 1) * h).div_ceil(s))).collect();
        Ok(Network {
            convs,
            image_size: config.image_size,
            grid: s,
            feat: h,
            bins,
        })
    }

    fn last_channels(&self) -> usize {
        self.convs.last().map(|c| c.out_c).unwrap_or(1)
    }

    /// Runs one image through the net.
    pub fn forward(&self, weights: &ModelWeights, image: &[f64]) -> Result<ForwardCache> {
        let n = self.image_size * self.image_size;
        if image.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "input has {} pixels, expected {}x{}",
                image.len(),
                self.image_size,
                self.image_size
            )));
        }
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.convs.len());
        let mut cols = Vec::with_capacity(self.convs.len());
        for (l, cs) in self.convs.iter().enumerate() {
            let w = &weights.tensors[2 * l].data;
            let b = &weights.tensors[2 * l + 1].data;
            let c = im2col(cs, acts.last().map_or(image, |a| a.as_slice()));
            let mut out = conv_forward(cs, &c, w, b);
            cols.push(c);
            for v in &mut out {
                if *v < 0.0 {
                    *v *= LEAKY_SLOPE;
                }
            }
            acts.push(out);
        }
        let c_last = self.last_channels();
        let s = self.grid;
        let last = acts.last().map_or(image, |a| a.as_slice());
        let mut pooled = vec![0.0; c_last * s * s];
        for k in 0..c_last {
            let plane = &last[k * self.feat * self.feat..(k + 1) * self.feat * self.feat];
            for (i, &(y0, y1)) in self.bins.iter().enumerate() {
                for (j, &(x0, x1)) in self.bins.iter().enumerate() {
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += plane[y * self.feat + x];
                        }
                    }
                    pooled[k * s * s + i * s + j] = sum / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let hw = &weights.tensors[2 * self.convs.len()].data;
        let hb = &weights.tensors[2 * self.convs.len() + 1].data;
        let mut head = vec![0.0; OUTPUTS_PER_CELL * s * s];
        for c in 0..OUTPUTS_PER_CELL {
            let out = &mut head[c * s * s..(c + 1) * s * s];
            out.fill(hb[c]);
            for k in 0..c_last {
                let wk = hw[c * c_last + k];
                for (o, p) in out.iter_mut().zip(&pooled[k * s * s..(k + 1) * s * s]) {
                    *o += wk * p;
                }
            }
        }
        if let Some(i) = head.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation(format!("head output {i}")));
        }
        Ok(ForwardCache { acts, cols, pooled, head })
    }

    /// Accumulates parameter gradients into `grads` given `d_head` (channel-major like `cache.head`).
    pub fn backward(&self, weights: &ModelWeights, cache: &ForwardCache, d_head: &[f64], grads: &mut [Vec<f64>]) {
        let s = self.grid;
        let c_last = self.last_channels();
        let nl = self.convs.len();
        let hw = &weights.tensors[2 * nl].data;
        {
            let (gw, gb) = split_pair(grads, 2 * nl);
            for c in 0..OUTPUTS_PER_CELL {
                let dout = &d_head[c * s * s..(c + 1) * s * s];
                gb[c] += dout.iter().sum::<f64>();
                for k in 0..c_last {
                    let p = &cache.pooled[k * s * s..(k + 1) * s * s];
                    gw[c * c_last + k] += dout.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let mut d_pooled = vec![0.0; c_last * s * s];
        for k in 0..c_last {
            for c in 0..OUTPUTS_PER_CELL {
                let wk = hw[c * c_last + k];
                let dout = &d_head[c * s * s..(c + 1) * s * s];
                for (d, g) in d_pooled[k * s * s..(k + 1) * s * s].iter_mut().zip(dout) {
                    *d += wk * g;
                }
            }
        }
        let f = self.feat;
        let mut d_act = vec![0.0; c_last * f * f];
        for k in 0..c_last {
            for (i, &(y0, y1)) in self.bins.iter().enumerate() {
                for (j, &(x0, x1)) in self.bins.iter().enumerate() {
                    let g = d_pooled[k * s * s + i * s + j] / ((y1 - y0) * (x1 - x0)) as f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            d_act[k * f * f + y * f + x] += g;
                        }
                    }
                }
            }
        }
        for l in (0..nl).rev() {
            let cs = &self.convs[l];
            let act = &cache.acts[l];
            for (d, &a) in d_act.iter_mut().zip(act) {
                if a <= 0.0 {
                    *d *= LEAKY_SLOPE;
                }
            }
            let w = &weights.tensors[2 * l].data;
            let (gw, gb) = split_pair(grads, 2 * l);
            let need_input_grad = l > 0;
            let d_in = conv_backward(cs, &cache.cols[l], w, &d_act, gw, gb, need_input_grad);
            d_act = d_in;
        }
    }

    /// Head outputs as `[i][j][channel]`.
    pub fn head_to_grid(&self, head: &[f64]) -> GridPrediction {
        let s = self.grid;
        let mut values = vec![0.0; s * s * OUTPUTS_PER_CELL];
        for c in 0..OUTPUTS_PER_CELL {
            for cell in 0..s * s {
                values[cell * OUTPUTS_PER_CELL + c] = head[c * s * s + cell];
            }
        }
        GridPrediction { grid: s, values }
    }
}

fn split_pair(grads: &mut [Vec<f64>], idx: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads[idx..idx + 2].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `k` (stride 2, pad 1).
#[inline]
fn tap_range(k: usize, in_n: usize, out_n: usize) -> (usize, usize) {
    if k > in_n {
        return (0, 0);
    }
    let lo = if k == 0 { 1 } else { 0 };
    // 2*o + k - 1 <= in_n - 1
    let hi = ((in_n - k) / 2 + 1).min(out_n);
    (lo, hi.max(lo))
}

/// Patch matrix `[in_c * 9][out_h * out_w]`, row `(i * 3 + ky) * 3 + kx`, zero where the
/// tap falls in the padding.
fn im2col(cs: &ConvShape, input: &[f64]) -> Vec<f64> {
    let n = cs.out_h * cs.out_w;
    let mut cols = vec![0.0; cs.in_c * 9 * n];
    for i in 0..cs.in_c {
        let inp = &input[i * cs.in_h * cs.in_w..(i + 1) * cs.in_h * cs.in_w];
        for ky in 0..3 {
            let (oy0, oy1) = tap_range(ky, cs.in_h, cs.out_h);
            for kx in 0..3 {
                let (ox0, ox1) = tap_range(kx, cs.in_w, cs.out_w);
                let r = (i * 3 + ky) * 3 + kx;
                let col = &mut cols[r * n..(r + 1) * n];
                for oy in oy0..oy1 {
                    let row = &inp[(2 * oy + ky - 1) * cs.in_w..];
                    let dst = &mut col[oy * cs.out_w..(oy + 1) * cs.out_w];
                    for ox in ox0..ox1 {
                        dst[ox] = row[2 * ox + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

/// Adds each patch-matrix entry back onto the input position it was gathered from.
fn col2im(cs: &ConvShape, dcols: &[f64]) -> Vec<f64> {
    let n = cs.out_h * cs.out_w;
    let mut d_in = vec![0.0; cs.in_c * cs.in_h * cs.in_w];
    for i in 0..cs.in_c {
        let dst = &mut d_in[i * cs.in_h * cs.in_w..(i + 1) * cs.in_h * cs.in_w];
        for ky in 0..3 {
            let (oy0, oy1) = tap_range(ky, cs.in_h, cs.out_h);
            for kx in 0..3 {
                let (ox0, ox1) = tap_range(kx, cs.in_w, cs.out_w);
                let r = (i * 3 + ky) * 3 + kx;
                let col = &dcols[r * n..(r + 1) * n];
                for oy in oy0..oy1 {
                    let row = &mut dst[(2 * oy + ky - 1) * cs.in_w..];
                    let src = &col[oy * cs.out_w..(oy + 1) * cs.out_w];
                    for ox in ox0..ox1 {
                        row[2 * ox + kx - 1] += src[ox];
                    }
                }
            }
        }
    }
    d_in
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_forward(cs: &ConvShape, cols: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = cs.out_h * cs.out_w;
    let k = cs.in_c * 9;
    let mut out = vec![0.0; cs.out_c * n];
    for o in 0..cs.out_c {
        let plane = &mut out[o * n..(o + 1) * n];
        plane.fill(b[o]);
        for r in 0..k {
            axpy(plane, w[o * k + r], &cols[r * n..(r + 1) * n]);
        }
    }
    out
}

fn conv_backward(
    cs: &ConvShape,
    cols: &[f64],
    w: &[f64],
    d_out: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let n = cs.out_h * cs.out_w;
    let k = cs.in_c * 9;
    let mut dcols = if need_input_grad { vec![0.0; k * n] } else { Vec::new() };
    for o in 0..cs.out_c {
        let dplane = &d_out[o * n..(o + 1) * n];
        gb[o] += dplane.iter().sum::<f64>();
        for r in 0..k {
            gw[o * k + r] += dot(dplane, &cols[r * n..(r + 1) * n]);
            if need_input_grad {
                axpy(&mut dcols[r * n..(r + 1) * n], w[o * k + r], dplane);
            }
        }
    }
    if need_input_grad {
        col2im(cs, &dcols)
    } else {
        Vec::new()
    }
}

/// Raw per-cell outputs for one image, laid out `[i][j][t_x, t_y, t_w, t_h, t_obj, t_cls..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    pub grid: usize,
    pub values: Vec<f64>,
}

impl GridPrediction {
    /// `(grid, grid, outputs_per_cell)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.grid, self.grid, OUTPUTS_PER_CELL)
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.grid + j) * OUTPUTS_PER_CELL;
        &self.values[start..start + OUTPUTS_PER_CELL]
    }
}

/// Forward pass over a batch of images already sized `image_size x image_size`.
pub fn forward(weights: &ModelWeights, config: &TrainConfig, batch: &[Vec<f64>]) -> Result<Vec<GridPrediction>> {
    weights.check_layout(config)?;
    let net = Network::new(config)?;
    batch
        .iter()
        .map(|img| net.forward(weights, img).map(|c| net.head_to_grid(&c.head)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            image_size: 32,
            grid_size: 4,
            channels: vec![4, 6, 8],
            ..Default::default()
        }
    }

    #[test]
    fn tap_ranges_cover_valid_inputs() {
        for in_n in 1..12usize {
            let out_n = in_n.div_ceil(2);
            for k in 0..3 {
                let (lo, hi) = tap_range(k, in_n, out_n);
                for o in 0..out_n {
                    let i = 2 * o as isize + k as isize - 1;
                    let valid = i >= 0 && (i as usize) < in_n;
                    assert_eq!(valid, o >= lo && o < hi, "in_n={in_n} k={k} o={o}");
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let cfg = small();
        let w = ModelWeights::zeros(&cfg);
        let img = vec![0.7; 32 * 32];
        let out = forward(&w, &cfg, &[img]).unwrap();
        assert!(out[0].values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_shape_and_purity() {
        let cfg = TrainConfig {
            image_size: 64,
            grid_size: 8,
            channels: vec![4, 4, 4],
            ..Default::default()
        };
        let w = ModelWeights::init(&cfg, 3);
        let img: Vec<f64> = (0..64 * 64).map(|i| (i % 17) as f64 / 17.0).collect();
        let batch = vec![img.clone(), vec![0.0; 64 * 64], img.clone(), vec![1.0; 64 * 64]];
        let out = forward(&w, &cfg, &batch).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].shape(), (8, 8, 6));
        assert_eq!(out[0], out[2]);
    }

    #[test]
    fn wrong_input_size_is_shape_mismatch() {
        let cfg = small();
        let w = ModelWeights::zeros(&cfg);
        assert!(matches!(forward(&w, &cfg, &[vec![0.0; 10]]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mismatched_fingerprint_rejected() {
        let cfg = small();
        let mut other = cfg.clone();
        other.channels = vec![4, 6, 9];
        let w = ModelWeights::zeros(&other);
        assert!(matches!(w.check_layout(&cfg), Err(Error::FingerprintMismatch { .. })));
    }
}
