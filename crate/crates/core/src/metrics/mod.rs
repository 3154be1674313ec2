//! Image-fidelity metrics and the evaluation protocol.

mod evaluate;
mod fid;

pub use evaluate::{evaluate_task, EvalTask, MetricsReport, DEFAULT_EVAL_PAIRS};
pub use fid::{fid, frechet_distance, FeatureStats};

use candle_core::{DType, Tensor};

use crate::{device, Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn to_255(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|v| (v + 1.0) * 127.5)
        .collect())
}

/// Peak signal-to-noise ratio in dB between two `[-1, 1]` tensors of equal
/// shape, measured on the 8-bit scale.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape("psnr", format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    let (x, y) = (to_255(a)?, to_255(b)?);
    let mse = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite("psnr input".into()));
    }
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (255.0 / mse.sqrt()).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| taps[t] * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| taps[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM of one pair of 8-bit-scale luma planes.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("{h}×{w} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window")));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &taps);
    let my = filter_valid(y, h, w, &taps);
    let sxx = filter_valid(&prod(x, x), h, w, &taps);
    let syy = filter_valid(&prod(y, y), h, w, &taps);
    let sxy = filter_valid(&prod(x, y), h, w, &taps);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (mx[i], my[i]);
        let vx = sxx[i] - a * a;
        let vy = syy[i] - b * b;
        let cxy = sxy[i] - a * b;
        total += ((2.0 * a * b + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((a * a + b * b + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / n as f64)
}

/// Rec. 601 luma of a `[B, 3, H, W]` image on the 8-bit scale, per image.
pub fn luma_planes(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::shape("luma input channels", 3, c));
    }
    let v = to_255(t)?;
    let plane = h * w;
    Ok((0..b)
        .map(|n| {
            (0..plane)
                .map(|p| (0..3).map(|ch| LUMA[ch] * v[(n * 3 + ch) * plane + p]).sum())
                .collect()
        })
        .collect())
}

/// Structural similarity of two `[B, 3, H, W]` images in `[-1, 1]`, averaged
/// over the batch.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape("ssim", format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    let (_, _, h, w) = a.dims4()?;
    let (pa, pb) = (luma_planes(a)?, luma_planes(b)?);
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        total += ssim_plane(x, y, h, w)?;
    }
    Ok(total / pa.len() as f64)
}

/// Interpolation matrix `[out, in]` for half-pixel-centred bilinear resizing.
fn bilinear_matrix(n_in: usize, n_out: usize) -> Vec<f32> {
    let mut m = vec![0f32; n_out * n_in];
    let scale = n_in as f64 / n_out as f64;
    for o in 0..n_out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let frac = src - i0 as f64;
        m[o * n_in + i0] += (1.0 - frac) as f32;
        m[o * n_in + i1] += frac as f32;
    }
    m
}

/// Bilinear resize of a `[B, C, H, W]` tensor, matching the usual
/// `align_corners = false` convention.
pub fn resize_bilinear_tensor(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    let dt = x.dtype();
    let ry = Tensor::from_vec(bilinear_matrix(h, height), (height, h), &device())?.to_dtype(dt)?;
    let rx = Tensor::from_vec(bilinear_matrix(w, width), (width, w), &device())?.to_dtype(dt)?.t()?;
    let x = x.broadcast_matmul(&rx.contiguous()?)?;
    Ok(ry.broadcast_matmul(&x.contiguous()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rand_img(seed: u64, shape: (usize, usize, usize, usize)) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &device()).unwrap()
    }

    #[test]
    fn psnr_cap_and_constant_offset() {
        let a = rand_img(0, (1, 3, 16, 16)).affine(0.5, 0.0).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = a.affine(1.0, 10.0 / 127.5).unwrap();
        let expected = 20.0 * (255.0f64 / 10.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-3);
        assert!((expected - 28.1308).abs() < 1e-3);
    }

    #[test]
    fn psnr_matches_scalar_rmse() {
        let a = rand_img(1, (2, 3, 8, 8)).to_dtype(DType::F64).unwrap();
        let b = rand_img(2, (2, 3, 8, 8)).to_dtype(DType::F64).unwrap();
        let av = a.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let bv = b.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let mut se = 0.0;
        for i in 0..av.len() {
            let d = (av[i] - bv[i]) * 127.5;
            se += d * d;
        }
        let rmse = (se / av.len() as f64).sqrt();
        assert!((psnr(&a, &b).unwrap() - 20.0 * (255.0 / rmse).log10()).abs() < 1e-6);
    }

    /// Direct 2-D window evaluation, independent of the separable path.
    fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
        let k = 11;
        let g: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                        (-(di * di + dj * dj) / 4.5).exp()
                    })
                    .collect()
            })
            .collect();
        let s: f64 = g.iter().flatten().sum();
        let (c1, c2) = (6.5025, 58.5225);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=h - k {
            for c in 0..=w - k {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g[i][j] / s;
                        let (p, q) = (x[(r + i) * w + c + j], y[(r + i) * w + c + j]);
                        mx += wt * p;
                        my += wt * q;
                        xx += wt * p * p;
                        yy += wt * q * q;
                        xy += wt * p * q;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = rand_img(3, (2, 3, 20, 24));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_oracle() {
        let a = rand_img(4, (1, 3, 19, 23)).to_dtype(DType::F64).unwrap();
        let b = rand_img(5, (1, 3, 19, 23)).to_dtype(DType::F64).unwrap();
        let (pa, pb) = (luma_planes(&a).unwrap(), luma_planes(&b).unwrap());
        let oracle = ssim_oracle(&pa[0], &pb[0], 19, 23);
        assert!((ssim(&a, &b).unwrap() - oracle).abs() < 1e-5);
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_low() {
        let a = rand_img(6, (1, 3, 32, 32)).ge(0.0).unwrap().to_dtype(DType::F32).unwrap().affine(2.0, -1.0).unwrap();
        let inv = a.neg().unwrap();
        let (pa, pb) = (luma_planes(&a).unwrap(), luma_planes(&inv).unwrap());
        let oracle = ssim_oracle(&pa[0], &pb[0], 32, 32);
        let v = ssim(&a, &inv).unwrap();
        assert!(v < 0.5);
        assert!((v - oracle).abs() < 1e-5);
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = rand_img(7, (1, 3, 8, 8));
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn resize_preserves_constants_and_identity() {
        let c = Tensor::full(0.25f32, (1, 2, 7, 9), &device()).unwrap();
        let r = resize_bilinear_tensor(&c, 13, 5).unwrap();
        assert_eq!(r.dims(), &[1, 2, 13, 5]);
        for v in r.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_upsample_by_two_matches_hand_values() {
        let x = Tensor::new(&[[[[0f32, 1.0]]]], &device()).unwrap();
        let r = resize_bilinear_tensor(&x, 1, 4).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(r, vec![0.0, 0.25, 0.75, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn psnr_and_ssim_are_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = rand_img(s1, (1, 3, 12, 12));
            let b = rand_img(s2 + 1000, (1, 3, 12, 12));
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
