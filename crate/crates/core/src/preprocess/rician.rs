use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Free parameters of the Rician normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationParams {
    /// Noise scale in intensity units; estimated from the volume when absent.
    pub sigma_hat: Option<f64>,
    /// Upper percentile (over non-zero corrected voxels) mapped to 1.0.
    pub p_hi: f64,
    /// Fraction of darkest voxels treated as signal-free background.
    pub background_fraction: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        NormalizationParams {
            sigma_hat: None,
            p_hi: 99.0,
            background_fraction: 0.10,
        }
    }
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma_hat {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig(format!("sigma_hat {s}")));
            }
        }
        if !(90.0..=100.0).contains(&self.p_hi) {
            return Err(Error::InvalidConfig(format!("p_hi {} outside [90, 100]", self.p_hi)));
        }
        if !(self.background_fraction > 0.0 && self.background_fraction <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "background_fraction {} outside (0, 0.5]",
                self.background_fraction
            )));
        }
        Ok(())
    }
}

/// Expected `E[I^2] / (2 sigma^2)` over the lowest `q` fraction of a Rayleigh sample.
///
/// `I^2 / (2 sigma^2)` is Exp(1); its lowest q-quantile slab integrates to
/// `q + (1 - q) ln(1 - q)`.
pub fn lower_tail_second_moment(q: f64) -> f64 {
    if q >= 1.0 {
        return 1.0;
    }
    1.0 + (1.0 - q) * (1.0 - q).ln() / q
}

/// Estimates the Rayleigh noise scale from the darkest `background_fraction` of voxels.
///
/// The raw second moment `mean(I^2) / 2` of that slab is rescaled by
/// [`lower_tail_second_moment`] so a signal-free Rayleigh(sigma) sample returns sigma.
pub fn estimate_rician_sigma(vol: &Volume, params: &NormalizationParams) -> Result<f64> {
    params.validate()?;
    let n = vol.data.len();
    if n < 1000 {
        return Err(Error::TooFewVoxels(n));
    }
    let k = ((params.background_fraction * n as f64).round() as usize).clamp(1, n);
    let mut values: Vec<f64> = vol.data.iter().map(|v| v.abs()).collect();
    if k < n {
        values.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let slab = &mut values[..k];
    slab.sort_by(f64::total_cmp);
    let mean_sq = slab.iter().map(|v| v * v).sum::<f64>() / k as f64;
    let q = k as f64 / n as f64;
    Ok((mean_sq / (2.0 * lower_tail_second_moment(q))).sqrt())
}

/// Linear-interpolated percentile of an already sorted slice.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let t = rank - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Bias-corrects magnitudes with `sqrt(max(I^2 - 2 sigma^2, 0))` and rescales to [0, 1].
pub fn rician_normalize(vol: &Volume, params: &NormalizationParams) -> Result<Volume> {
    let sigma = match params.sigma_hat {
        Some(s) => s,
        None => estimate_rician_sigma(vol, params)?,
    };
    params.validate()?;
    let two_var = 2.0 * sigma * sigma;
    let corrected: Vec<f64> = vol
        .data
        .iter()
        .map(|&i| (i * i - two_var).max(0.0).sqrt())
        .collect();
    let mut nonzero: Vec<f64> = corrected.iter().copied().filter(|&v| v > 0.0).collect();
    nonzero.sort_by(f64::total_cmp);
    let scale = percentile_sorted(&nonzero, params.p_hi);
    let data = if scale > 0.0 {
        corrected.iter().map(|v| (v / scale).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; corrected.len()]
    };
    Ok(Volume {
        data,
        ..vol.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn flat(values: Vec<f64>) -> Volume {
        let n = values.len();
        Volume::new(values, [n, 1, 1], [1.0; 3]).unwrap()
    }

    #[test]
    fn zero_volume_has_zero_sigma() {
        let sigma = estimate_rician_sigma(&flat(vec![0.0; 4096]), &NormalizationParams::default()).unwrap();
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn too_few_voxels() {
        let err = estimate_rician_sigma(&flat(vec![1.0; 999]), &NormalizationParams::default()).unwrap_err();
        assert!(matches!(err, Error::TooFewVoxels(999)));
    }

    #[test]
    fn constant_background_closed_form() {
        let c = 3.0;
        let params = NormalizationParams::default();
        let sigma = estimate_rician_sigma(&flat(vec![c; 10_000]), &params).unwrap();
        let expect = c / (2.0 * lower_tail_second_moment(0.1)).sqrt();
        assert!((sigma - expect).abs() < 1e-12);
    }

    #[test]
    fn tail_moment_matches_numeric_integral() {
        // midpoint quadrature of x e^{-x} on [0, -ln(1-q)]
        for q in [0.05, 0.1, 0.25, 0.5] {
            let upper = -(1.0f64 - q).ln();
            let steps = 200_000;
            let h = upper / steps as f64;
            let integral: f64 = (0..steps)
                .map(|i| {
                    let x = (i as f64 + 0.5) * h;
                    x * (-x).exp() * h
                })
                .sum();
            assert!((integral / q - lower_tail_second_moment(q)).abs() < 1e-8, "q={q}");
        }
    }

    #[test]
    fn recovers_rayleigh_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Normal::new(0.0, 5.0).unwrap();
        let data: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let (a, b): (f64, f64) = (g.sample(&mut rng), g.sample(&mut rng));
                a.hypot(b)
            })
            .collect();
        let sigma = estimate_rician_sigma(&flat(data), &NormalizationParams::default()).unwrap();
        assert!((sigma - 5.0).abs() < 0.05, "sigma = {sigma}");
    }

    #[test]
    fn correction_zeroes_and_formula() {
        let s: f64 = 2.0;
        let params = NormalizationParams {
            sigma_hat: Some(s),
            p_hi: 100.0,
            background_fraction: 0.1,
        };
        // I = s*sqrt(2) -> 0; I = s*sqrt(3) -> s; the 100th percentile rescales s*2 to 1
        let vol = flat(vec![s * 2f64.sqrt(), s * 3f64.sqrt(), (4.0 * s * s + 2.0 * s * s).sqrt(), 0.0]);
        let out = rician_normalize(&vol, &params).unwrap();
        assert!(out.data[0].abs() < 1e-6);
        assert!((out.data[1] - 0.5).abs() < 1e-12);
        assert!((out.data[2] - 1.0).abs() < 1e-12);
        assert_eq!(out.data[3], 0.0);
    }

    #[test]
    fn all_below_noise_floor_gives_zeros() {
        let params = NormalizationParams {
            sigma_hat: Some(10.0),
            ..Default::default()
        };
        let out = rician_normalize(&flat(vec![1.0, 2.0, 3.0]), &params).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_validated() {
        let mut p = NormalizationParams::default();
        p.p_hi = 80.0;
        assert!(p.validate().is_err());
        p.p_hi = 99.0;
        p.background_fraction = 0.6;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn output_bounded_and_monotone(mut values in proptest::collection::vec(0.0f64..1000.0, 2..200), sigma in 0.0f64..50.0) {
            values.sort_by(f64::total_cmp);
            let params = NormalizationParams { sigma_hat: Some(sigma), ..Default::default() };
            let out = rician_normalize(&flat(values), &params).unwrap();
            prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(out.data.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
