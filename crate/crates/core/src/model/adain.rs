//! Adaptive instance normalization.
//!
//! `AdaIN(X, y) = σ(y) · (X − μ(X)) / σ(X) + μ(y)`, with `μ(X)`, `σ(X)`
//! taken per sample and per channel over the spatial axes.

use candle_core::{Tensor, D};

use super::layers::{inverse_softplus_one, softplus, Linear};
use super::params::{Init, ParamStore};
use crate::{ensure_finite, Error, Result};

/// Added to the instance standard deviation before dividing.
pub const INSTANCE_EPS: f64 = 1e-5;

/// Keeps the square root differentiable on constant channels.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-sample, per-channel `(μ, σ + ε)` of a `[B, C, H, W]` map, each `[B, C]`.
///
/// The returned deviation already includes [`INSTANCE_EPS`]: it is exactly
/// the divisor [`adain`] uses, so `adain(x, instance_stats(x))` returns `x`.
pub fn instance_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let var = flat.broadcast_sub(&mean)?.sqr()?.mean(D::Minus1)?;
    let std = var.affine(1.0, VARIANCE_FLOOR)?.sqrt()?.affine(1.0, INSTANCE_EPS)?;
    Ok((mean.squeeze(D::Minus1)?, std))
}

fn as_batch_stats(t: &Tensor, b: usize, c: usize, what: &'static str) -> Result<Tensor> {
    match t.dims() {
        [n] if *n == c => Ok(t.reshape((1, c, 1, 1))?.broadcast_as((b, c, 1, 1))?),
        [n, m] if *m == c && (*n == b || *n == 1) => Ok(t.reshape((*n, c, 1, 1))?.broadcast_as((b, c, 1, 1))?),
        d => Err(Error::shape(what, format!("[{c}] or [{b}, {c}]"), format!("{d:?}"))),
    }
}

/// Re-normalizes `content` so each channel has mean `mu` and deviation
/// `sigma`. Style statistics are `[C]` (shared) or `[B, C]` (per sample).
pub fn adain(content: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let (b, c, _, _) = content.dims4()?;
    let mu = as_batch_stats(mu, b, c, "adain style mean")?;
    let sigma = as_batch_stats(sigma, b, c, "adain style deviation")?;
    ensure_finite(&mu, "adain style mean")?;
    ensure_finite(&sigma, "adain style deviation")?;
    let (mean, std) = instance_stats(content)?;
    let mean = mean.reshape((b, c, 1, 1))?;
    let std = std.reshape((b, c, 1, 1))?;
    let normalized = content.broadcast_sub(&mean)?.broadcast_div(&std)?;
    Ok(normalized.broadcast_mul(&sigma)?.broadcast_add(&mu)?)
}

/// Learned map from a style vector to per-channel AdaIN statistics:
/// `μ = A·s + b` (first `C` outputs), `σ = softplus(·)` (last `C`).
///
/// The bias starts at `(0…0, softplus⁻¹(1)…)`, so a zero style vector
/// yields `(μ, σ) = (0, 1)` and the layer begins as plain instance norm.
#[derive(Clone, Debug)]
pub struct StyleAffine {
    linear: Linear,
    channels: usize,
}

impl StyleAffine {
    pub fn new(store: &mut ParamStore, prefix: &str, style_dim: usize, channels: usize) -> Result<Self> {
        let linear = Linear::with_init(
            store,
            prefix,
            style_dim,
            2 * channels,
            // Unit-variance stats per unit-RMS style vector; a much smaller
            // scale leaves the generator free to ignore the style.
            Init::Normal(1.0 / (style_dim as f64).sqrt()),
            Init::SplitConst {
                head: channels,
                tail_value: inverse_softplus_one(),
            },
        )?;
        Ok(Self { linear, channels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(μ, σ)`, each `[B, C]`, for a `[B, style_dim]` batch of style vectors.
    pub fn stats(&self, style: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.linear.forward(style)?;
        let mu = out.narrow(1, 0, self.channels)?;
        let sigma = softplus(&out.narrow(1, self.channels, self.channels)?)?;
        Ok((mu, sigma))
    }

    pub fn forward(&self, x: &Tensor, style: &Tensor) -> Result<Tensor> {
        let (mu, sigma) = self.stats(style)?;
        adain(x, &mu, &sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device;
    use candle_core::DType;

    /// Direct triple-loop evaluation of the AdaIN formula.
    fn adain_oracle(x: &[f64], (b, c, hw): (usize, usize, usize), mu: &[f64], sigma: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for i in 0..b {
            for j in 0..c {
                let base = (i * c + j) * hw;
                let m = x[base..base + hw].iter().sum::<f64>() / hw as f64;
                let v = x[base..base + hw].iter().map(|v| (v - m) * (v - m)).sum::<f64>() / hw as f64;
                let s = (v + VARIANCE_FLOOR).sqrt() + INSTANCE_EPS;
                for k in 0..hw {
                    out[base + k] = sigma[i * c + j] * (x[base + k] - m) / s + mu[i * c + j];
                }
            }
        }
        out
    }

    #[test]
    fn matches_scalar_oracle() {
        let dev = device();
        let x = Tensor::randn(0.5f64, 2.0, (2, 4, 8, 8), &dev).unwrap();
        let mu = Tensor::randn(0f64, 1.0, (2, 4), &dev).unwrap();
        let sigma = Tensor::rand(0.1f64, 3.0, (2, 4), &dev).unwrap();
        let got = adain(&x, &mu, &sigma).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let expected = adain_oracle(
            &x.flatten_all().unwrap().to_vec1().unwrap(),
            (2, 4, 64),
            &mu.flatten_all().unwrap().to_vec1().unwrap(),
            &sigma.flatten_all().unwrap().to_vec1().unwrap(),
        );
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-6, "{g} vs {e}");
        }
    }

    #[test]
    fn fixed_point_on_own_statistics() {
        let x = Tensor::randn(1f64, 3.0, (2, 3, 8, 8), &device()).unwrap();
        let (m, s) = instance_stats(&x).unwrap();
        let y = adain(&x, &m, &s).unwrap();
        let d = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d <= 1e-5, "{d}");
    }

    #[test]
    fn imposes_target_statistics() {
        let dev = device();
        let raw = Tensor::randn(0f64, 1.0, (1, 2, 16, 16), &dev).unwrap();
        // Standardize exactly so the content has μ=0, σ=1.
        let (m, s) = instance_stats(&raw).unwrap();
        let x = raw
            .broadcast_sub(&m.reshape((1, 2, 1, 1)).unwrap())
            .unwrap()
            .broadcast_div(&(s.affine(1.0, -INSTANCE_EPS).unwrap()).reshape((1, 2, 1, 1)).unwrap())
            .unwrap();
        let mu = Tensor::new(&[2.0f64, 2.0], &dev).unwrap();
        let sigma = Tensor::new(&[3.0f64, 3.0], &dev).unwrap();
        let y = adain(&x, &mu, &sigma).unwrap();
        let (ym, ys) = instance_stats(&y).unwrap();
        for v in ym.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 2.0).abs() <= 1e-4);
        }
        for v in ys.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - INSTANCE_EPS - 3.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let dev = device();
        let x = Tensor::zeros((1, 3, 4, 4), DType::F32, &dev).unwrap();
        let mu = Tensor::zeros(4, DType::F32, &dev).unwrap();
        assert!(adain(&x, &mu, &mu).is_err());
    }

    #[test]
    fn non_finite_style_is_an_error() {
        let dev = device();
        let x = Tensor::zeros((1, 2, 4, 4), DType::F32, &dev).unwrap();
        let mu = Tensor::new(&[0f32, f32::NAN], &dev).unwrap();
        let sigma = Tensor::ones(2, DType::F32, &dev).unwrap();
        assert!(matches!(adain(&x, &mu, &sigma), Err(Error::NonFinite(_))));
    }

    #[test]
    fn constant_channels_stay_finite() {
        let dev = device();
        let x = Tensor::ones((1, 2, 4, 4), DType::F32, &dev).unwrap();
        let mu = Tensor::new(&[0.5f32, -0.5], &dev).unwrap();
        let sigma = Tensor::ones(2, DType::F32, &dev).unwrap();
        let y = adain(&x, &mu, &sigma).unwrap();
        assert_eq!(y.mean((2, 3)).unwrap().to_vec2::<f32>().unwrap(), vec![vec![0.5, -0.5]]);
    }

    #[test]
    fn zero_style_gives_unit_statistics() {
        let mut store = ParamStore::new(DType::F64, 3);
        let affine = StyleAffine::new(&mut store, "a", 512, 256).unwrap();
        let s = Tensor::zeros((1, 512), DType::F64, &device()).unwrap();
        let (mu, sigma) = affine.stats(&s).unwrap();
        assert_eq!(mu.dims(), &[1, 256]);
        for v in mu.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert_eq!(v, 0.0);
        }
        for v in sigma.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
