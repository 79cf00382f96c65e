//! Adam with decoupled weight decay.

use super::config::{TrainConfig, WeightDecayMode};
use super::network::ModelWeights;
use crate::error::{Error, Result};

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        AdamState {
            m: weights.zeros_like(),
            v: weights.zeros_like(),
            t: 0,
        }
    }
}

/// Updates one tensor in place. `t` is the 1-based step index.
///
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, then
/// `w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w`.
pub fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, config: &TrainConfig) {
    let (b1, b2, lr, eps, wd) = (
        config.beta1,
        config.beta2,
        config.learning_rate,
        config.epsilon,
        config.weight_decay,
    );
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for k in 0..w.len() {
        let grad = match config.weight_decay_mode {
            WeightDecayMode::Decoupled => g[k],
            WeightDecayMode::L2 => g[k] + wd * w[k],
        };
        m[k] = b1 * m[k] + (1.0 - b1) * grad;
        v[k] = b2 * v[k] + (1.0 - b2) * grad * grad;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        let mut next = w[k] - lr * m_hat / (v_hat.sqrt() + eps);
        if config.weight_decay_mode == WeightDecayMode::Decoupled {
            next -= lr * wd * w[k];
        }
        w[k] = next;
    }
}

/// One optimizer step over every tensor.
pub fn adam_step(weights: &mut ModelWeights, grads: &[Vec<f64>], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.len() != weights.tensors.len() || state.m.len() != weights.tensors.len() {
        return Err(Error::ShapeMismatch("gradient / state / weight tensor counts differ".into()));
    }
    state.t += 1;
    for (idx, tensor) in weights.tensors.iter_mut().enumerate() {
        let g = &grads[idx];
        if g.len() != tensor.data.len() || state.m[idx].len() != g.len() || state.v[idx].len() != g.len() {
            return Err(Error::ShapeMismatch(format!("tensor {}", tensor.name)));
        }
        adam_update(&mut tensor.data, g, &mut state.m[idx], &mut state.v[idx], state.t, config);
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate(tensor.name.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..Default::default()
        }
    }

    /// Scalar Adam written out longhand.
    fn oracle(w: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        w - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * w
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut w, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&mut w, &[0.1], &mut m, &mut v, 1, &cfg(0.001, 0.0));
        assert!(((1.0 - w[0]) - 0.001).abs() < 1e-6);
        assert!((w[0] - 0.999).abs() < 1e-6);
        assert_eq!(w[0], oracle(1.0, 0.1, 0.001, 0.0));
    }

    #[test]
    fn zero_gradient_fixpoint() {
        let (mut w, mut m, mut v) = ([1.0, -2.5], [0.0, 0.0], [0.0, 0.0]);
        adam_update(&mut w, &[0.0, 0.0], &mut m, &mut v, 1, &cfg(0.001, 0.0));
        assert_eq!(w, [1.0, -2.5]);
        assert_eq!(m, [0.0, 0.0]);
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn decay_only_step() {
        let (mut w, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&mut w, &[0.0], &mut m, &mut v, 1, &cfg(0.001, 0.00005));
        assert!((w[0] - 0.99999995).abs() < 1e-15);
    }

    #[test]
    fn l2_mode_folds_decay_into_gradient() {
        let mut c = cfg(0.001, 0.00005);
        c.weight_decay_mode = WeightDecayMode::L2;
        let (mut w, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&mut w, &[0.0], &mut m, &mut v, 1, &c);
        // the normalized step is a full lr regardless of the tiny gradient
        assert!((w[0] - 0.999).abs() < 1e-6);
        assert!(m[0] > 0.0);
    }
}
