//! Fréchet distance between Gaussian fits of two feature sets.

use candle_core::{DType, Tensor};
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Mean and unbiased covariance of a feature set.
#[derive(Clone, Debug)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureStats {
    /// Statistics of the rows of an `[n, d]` matrix, `n ≥ 2`.
    pub fn from_rows(x: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 feature rows, got {n}")));
        }
        if n < d {
            log::warn!("{n} samples for {d}-d features: covariance is rank deficient");
        }
        let mean = x.row_mean().transpose();
        let mut centred = x.clone();
        for mut row in centred.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centred.transpose() * &centred / (n as f64 - 1.0);
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature covariance".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, d) = t.dims2()?;
        let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Self::from_rows(&DMatrix::from_row_slice(n, d, &v))
    }
}

/// Symmetric PSD square root with eigenvalues clipped at zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½)`.
///
/// `Tr((Σ₁Σ₂)^½)` is evaluated as the trace of the square root of the
/// symmetric, similar matrix `Σ₁^½ Σ₂ Σ₁^½`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::shape("fid feature dim", a.mean.len(), b.mean.len()));
    }
    let diff = &a.mean - &b.mean;
    let root_a = sqrt_psd(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = sym.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::NonFinite("fid".into()));
    }
    Ok(d.max(0.0))
}

/// FID between two `[n, d]` feature tensors.
pub fn fid(real: &Tensor, fake: &Tensor) -> Result<f64> {
    frechet_distance(&FeatureStats::from_tensor(real)?, &FeatureStats::from_tensor(fake)?)
}
