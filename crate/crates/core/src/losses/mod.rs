//! The four generator loss terms, the discriminator loss and their weighted
//! combination.
//!
//! Every term is returned as a scalar tensor so it can be back-propagated;
//! use [`scalar`] to read the value.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::extractors::FeatureExtractor;
use crate::model::{Encoder, PatchMap};
use crate::{ensure_finite, Error, Result};

/// Probabilities are clipped to `[SIGMOID_CLIP, 1 − SIGMOID_CLIP]` before
/// taking logs.
pub const SIGMOID_CLIP: f64 = 1e-7;

/// Logits beyond this magnitude already saturate the clip; clamping them
/// first keeps `exp` finite in the backward pass.
const LOGIT_LIMIT: f64 = 20.0;

/// λ weights of the total generator objective. All default to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_pixel: f64,
    pub lambda_style: f64,
    pub lambda_perceptual: f64,
    pub lambda_adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pixel: 1.0,
            lambda_style: 1.0,
            lambda_perceptual: 1.0,
            lambda_adversarial: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_pixel", self.lambda_pixel),
            ("lambda_style", self.lambda_style),
            ("lambda_perceptual", self.lambda_perceptual),
            ("lambda_adversarial", self.lambda_adversarial),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// The four generator-side terms, generic over scalar or tensor values.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorTerms<T> {
    pub pixel: T,
    pub style: T,
    pub perceptual: T,
    pub adversarial: T,
}

/// Values of every term at one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pixel: f64,
    pub style: f64,
    pub perceptual: f64,
    pub adversarial_g: f64,
    pub adversarial_d: f64,
    pub total_g: f64,
}

/// Reads a scalar tensor as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn same_shape(a: &Tensor, b: &Tensor, context: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(context, format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    Ok(())
}

/// Mean absolute difference over all elements.
pub fn l1_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "l1_distance")?;
    Ok((a - b)?.abs()?.mean_all()?)
}

/// L1 between a target image and its synthesis, over the whole image.
pub fn pixel_loss(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    same_shape(x, x_hat, "pixel_loss")?;
    l1_distance(x, x_hat)
}

/// Sum over the extractor's tap layers of the L1 distance between feature
/// maps, each weighted by the extractor's tap weight.
pub fn perceptual_loss(x: &Tensor, x_hat: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    same_shape(x, x_hat, "perceptual_loss")?;
    let fx = extractor.features(x)?;
    let fy = extractor.features(x_hat)?;
    let weights = extractor.tap_weights();
    let mut total: Option<Tensor> = None;
    for ((a, b), w) in fx.iter().zip(&fy).zip(weights) {
        let term = l1_distance(a, b)?.affine(w, 0.0)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("extractor has no tap layers".into()))
}

/// L1 distance between the style vectors of the real and the generated hair
/// region. Gradients reach both the encoder and the generator.
pub fn style_loss(
    real_hair: &Tensor,
    fake_hair: &Tensor,
    mask_real: &Tensor,
    mask_fake: &Tensor,
    encoder: &Encoder,
) -> Result<Tensor> {
    let s_real = encoder.forward(real_hair, mask_real)?;
    let s_fake = encoder.forward(fake_hair, mask_fake)?;
    l1_distance(&s_real, &s_fake)
}

/// `log σ(x)` with σ clipped to `[1e-7, 1 − 1e-7]`.
fn log_sigmoid_clipped(logits: &Tensor) -> Result<Tensor> {
    let p = logits
        .clamp(-LOGIT_LIMIT, LOGIT_LIMIT)?
        .neg()?
        .exp()?
        .affine(1.0, 1.0)?
        .recip()?;
    Ok(p.clamp(SIGMOID_CLIP, 1.0 - SIGMOID_CLIP)?.log()?)
}

/// `log(1 − σ(x))` with the same clipping.
fn log_one_minus_sigmoid_clipped(logits: &Tensor) -> Result<Tensor> {
    log_sigmoid_clipped(&logits.neg()?)
}

/// `−mean log σ(D(x)) − mean log(1 − σ(D(G(·))))`.
pub fn discriminator_loss(d_real: &PatchMap, d_fake: &PatchMap) -> Result<Tensor> {
    let real = log_sigmoid_clipped(d_real.scores())?.mean_all()?;
    let fake = log_one_minus_sigmoid_clipped(d_fake.scores())?.mean_all()?;
    let loss = (real + fake)?.neg()?;
    ensure_finite(&loss, "discriminator loss")?;
    Ok(loss)
}

/// Non-saturating generator term `−mean log σ(D(G(·)))`.
pub fn generator_adversarial_loss(d_fake: &PatchMap) -> Result<Tensor> {
    let loss = log_sigmoid_clipped(d_fake.scores())?.mean_all()?.neg()?;
    ensure_finite(&loss, "generator adversarial loss")?;
    Ok(loss)
}

/// `(loss_d, loss_g)`. `d_fake_for_d` is normally computed on a detached
/// fake so the discriminator update does not reach the generator.
pub fn adversarial_losses(
    d_real: &PatchMap,
    d_fake_for_d: &PatchMap,
    d_fake_for_g: &PatchMap,
) -> Result<(Tensor, Tensor)> {
    Ok((
        discriminator_loss(d_real, d_fake_for_d)?,
        generator_adversarial_loss(d_fake_for_g)?,
    ))
}

/// `Σ λᵢ · termᵢ` over scalar values.
pub fn total_generator_loss(terms: &GeneratorTerms<f64>, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    let t = [terms.pixel, terms.style, terms.perceptual, terms.adversarial];
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss terms {t:?}")));
    }
    Ok(weights.lambda_pixel * terms.pixel
        + weights.lambda_style * terms.style
        + weights.lambda_perceptual * terms.perceptual
        + weights.lambda_adversarial * terms.adversarial)
}

/// Differentiable counterpart of [`total_generator_loss`].
pub fn total_generator_loss_tensor(terms: &GeneratorTerms<Tensor>, weights: &LossWeights) -> Result<Tensor> {
    weights.validate()?;
    let sum = terms.pixel.affine(weights.lambda_pixel, 0.0)?
        + terms.style.affine(weights.lambda_style, 0.0)?;
    let sum = (sum? + terms.perceptual.affine(weights.lambda_perceptual, 0.0)?)?;
    Ok((sum + terms.adversarial.affine(weights.lambda_adversarial, 0.0)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device;
    use crate::extractors::IdentityExtractor;
    use std::f64::consts::LN_2;

    fn t(shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::randn(0f64, 1., shape, &device()).unwrap()
    }

    #[test]
    fn l1_constants() {
        let a = t((1, 3, 5, 5));
        assert_eq!(scalar(&l1_distance(&a, &a).unwrap()).unwrap(), 0.0);
        let b = a.affine(1.0, 0.5).unwrap();
        assert!((scalar(&l1_distance(&a, &b).unwrap()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn l1_matches_double_loop() {
        let a = Tensor::randn(0f64, 1., (3, 5), &device()).unwrap();
        let b = Tensor::randn(0f64, 1., (3, 5), &device()).unwrap();
        let (av, bv) = (a.to_vec2::<f64>().unwrap(), b.to_vec2::<f64>().unwrap());
        let mut sum = 0.0;
        for i in 0..3 {
            for j in 0..5 {
                sum += (av[i][j] - bv[i][j]).abs();
            }
        }
        assert!((scalar(&l1_distance(&a, &b).unwrap()).unwrap() - sum / 15.0).abs() < 1e-7);
    }

    #[test]
    fn l1_shape_mismatch() {
        assert!(l1_distance(&t((1, 3, 4, 4)), &t((1, 3, 4, 5))).is_err());
    }

    #[test]
    fn pixel_loss_of_negated_binary_image_is_two() {
        let x = t((1, 3, 8, 8)).ge(0.0).unwrap().to_dtype(DType::F64).unwrap().affine(2.0, -1.0).unwrap();
        let v = scalar(&pixel_loss(&x, &x.neg().unwrap()).unwrap()).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perceptual_identity_stub_equals_pixel() {
        let (x, y) = (t((2, 3, 8, 8)), t((2, 3, 8, 8)));
        let p = scalar(&perceptual_loss(&x, &y, &IdentityExtractor).unwrap()).unwrap();
        let q = scalar(&pixel_loss(&x, &y).unwrap()).unwrap();
        assert!((p - q).abs() < 1e-12);
        let r = scalar(&perceptual_loss(&y, &x, &IdentityExtractor).unwrap()).unwrap();
        assert_eq!(p, r);
        assert_eq!(scalar(&perceptual_loss(&x, &x, &IdentityExtractor).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn adversarial_equilibrium() {
        let z = PatchMap(Tensor::zeros((2, 1, 8, 8), DType::F64, &device()).unwrap());
        let (d, g) = adversarial_losses(&z, &z, &z).unwrap();
        assert!((scalar(&d).unwrap() - 2.0 * LN_2).abs() < 1e-9);
        assert!((scalar(&g).unwrap() - LN_2).abs() < 1e-9);
    }

    #[test]
    fn perfect_discriminator_limit() {
        let hi = PatchMap(Tensor::full(1e6f64, (1, 1, 8, 8), &device()).unwrap());
        let lo = PatchMap(Tensor::full(-1e6f64, (1, 1, 8, 8), &device()).unwrap());
        let d = scalar(&discriminator_loss(&hi, &lo).unwrap()).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn adversarial_matches_scalar_loop() {
        let sig = |x: f64| (1.0 / (1.0 + (-x).exp())).clamp(SIGMOID_CLIP, 1.0 - SIGMOID_CLIP);
        let r = t((2, 1, 8, 8)).affine(3.0, 0.0).unwrap();
        let f = t((2, 1, 8, 8)).affine(3.0, 0.0).unwrap();
        let (d, g) = adversarial_losses(&PatchMap(r.clone()), &PatchMap(f.clone()), &PatchMap(f.clone())).unwrap();
        let rv = r.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let fv = f.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let n = rv.len() as f64;
        let ed = -rv.iter().map(|&x| sig(x).ln()).sum::<f64>() / n - fv.iter().map(|&x| (1.0 - sig(x)).ln()).sum::<f64>() / n;
        let eg = -fv.iter().map(|&x| sig(x).ln()).sum::<f64>() / n;
        assert!((scalar(&d).unwrap() - ed).abs() < 1e-6);
        assert!((scalar(&g).unwrap() - eg).abs() < 1e-6);
    }

    #[test]
    fn saturated_logits_have_finite_gradients() {
        let v = candle_core::Var::from_tensor(&Tensor::new(&[[[[-500f64, 500.0]]]], &device()).unwrap()).unwrap();
        let loss = generator_adversarial_loss(&PatchMap(v.as_tensor().clone())).unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(v.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn total_loss_examples() {
        let terms = GeneratorTerms { pixel: 1.0, style: 2.0, perceptual: 3.0, adversarial: 4.0 };
        assert_eq!(total_generator_loss(&terms, &LossWeights::default()).unwrap(), 10.0);
        let zero = LossWeights { lambda_pixel: 0.0, lambda_style: 0.0, lambda_perceptual: 0.0, lambda_adversarial: 0.0 };
        assert_eq!(total_generator_loss(&terms, &zero).unwrap(), 0.0);
        let neg = LossWeights { lambda_style: -1.0, ..LossWeights::default() };
        assert!(total_generator_loss(&terms, &neg).is_err());
    }

    #[test]
    fn total_loss_is_linear_in_each_weight() {
        let terms = GeneratorTerms { pixel: 0.3, style: 0.7, perceptual: 1.1, adversarial: 0.9 };
        let base = total_generator_loss(&terms, &LossWeights::default()).unwrap();
        let scaled = LossWeights { lambda_perceptual: 3.0, ..LossWeights::default() };
        let v = total_generator_loss(&terms, &scaled).unwrap();
        assert!((v - base - 2.0 * 1.1).abs() < 1e-12);
    }

    #[test]
    fn tensor_total_matches_scalar_total() {
        let dev = device();
        let w = LossWeights { lambda_pixel: 0.5, lambda_style: 2.0, lambda_perceptual: 1.5, lambda_adversarial: 0.25 };
        let s = |v: f64| Tensor::new(v, &dev).unwrap();
        let tt = GeneratorTerms { pixel: s(1.0), style: s(2.0), perceptual: s(3.0), adversarial: s(4.0) };
        let st = GeneratorTerms { pixel: 1.0, style: 2.0, perceptual: 3.0, adversarial: 4.0 };
        assert_eq!(scalar(&total_generator_loss_tensor(&tt, &w).unwrap()).unwrap(), total_generator_loss(&st, &w).unwrap());
    }
}
