//! Hair-blending output stage.
//!
//! The synthesized hair is rendered to RGB, pasted into the mask region of
//! the preserved background, and the composite is refined by one 3×3
//! convolution followed by the bounded output activation.

use candle_core::Tensor;

use super::layers::Conv2d;
use super::params::{Init, ParamStore};
use super::resblock::AdainResBlock;
use crate::{Error, Result};

/// Clamps to `[-1, 1]` (hard tanh).
pub fn bounded_activation(x: &Tensor) -> Result<Tensor> {
    Ok(x.clamp(-1.0, 1.0)?)
}

/// `hair ⊙ M + background`, where `background` is already zero inside the
/// mask. Outside the mask the result is the background, bit for bit.
pub fn composite(hair: &Tensor, mask: &Tensor, background: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = hair.dims4()?;
    if mask.dims() != [b, 1, h, w] {
        return Err(Error::shape("blend mask", format!("[{b}, 1, {h}, {w}]"), format!("{:?}", mask.dims())));
    }
    if background.dims() != [b, c, h, w] {
        return Err(Error::shape(
            "blend background",
            format!("[{b}, {c}, {h}, {w}]"),
            format!("{:?}", background.dims()),
        ));
    }
    Ok(hair.broadcast_mul(mask)?.add(background)?)
}

/// Everything the blend stage produces.
#[derive(Clone, Debug)]
pub struct BlendOutput {
    /// Final image in `[-1, 1]`.
    pub image: Tensor,
    /// RGB hair rendering before compositing.
    pub hair: Tensor,
    /// `hair ⊙ M + background`, before the refining convolution.
    pub composite: Tensor,
}

#[derive(Clone, Debug)]
pub struct BlendLayer {
    block: AdainResBlock,
    to_rgb: Conv2d,
    refine: Conv2d,
}

impl BlendLayer {
    /// The refining convolution starts as the identity, so an untrained
    /// blend reproduces the background exactly.
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, style_dim: usize) -> Result<Self> {
        Ok(Self {
            block: AdainResBlock::new(store, &format!("{prefix}.block"), channels, channels, style_dim)?,
            to_rgb: Conv2d::new(store, &format!("{prefix}.to_rgb"), channels, 3, 1, 1, 0, true)?,
            refine: Conv2d::with_init(
                store,
                &format!("{prefix}.refine"),
                (3, 3, 3, 1, 1),
                Init::Dirac(1.0),
                Some(Init::Const(0.0)),
            )?,
        })
    }

    pub fn block(&self) -> &AdainResBlock {
        &self.block
    }

    pub fn forward(&self, features: &Tensor, style: &Tensor, mask: &Tensor, background: &Tensor) -> Result<BlendOutput> {
        let hair = self.to_rgb.forward(&self.block.forward(features, style)?)?;
        let composite = composite(&hair, mask, background)?;
        let image = bounded_activation(&self.refine.forward(&composite)?)?;
        Ok(BlendOutput { image, hair, composite })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device;
    use candle_core::DType;

    fn binary(shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::rand(0f64, 1., shape, &device()).unwrap().ge(0.5).unwrap().to_dtype(DType::F64).unwrap()
    }

    #[test]
    fn zero_mask_keeps_background() {
        let h = Tensor::randn(0f64, 1., (2, 3, 8, 8), &device()).unwrap();
        let bg = Tensor::randn(0f64, 1., (2, 3, 8, 8), &device()).unwrap();
        let m = Tensor::zeros((2, 1, 8, 8), DType::F64, &device()).unwrap();
        let c = composite(&h, &m, &bg).unwrap();
        assert_eq!(c.flatten_all().unwrap().to_vec1::<f64>().unwrap(), bg.flatten_all().unwrap().to_vec1::<f64>().unwrap());
    }

    #[test]
    fn full_mask_is_pure_hair() {
        let h = Tensor::randn(0f64, 1., (1, 3, 8, 8), &device()).unwrap();
        let bg = Tensor::zeros((1, 3, 8, 8), DType::F64, &device()).unwrap();
        let m = Tensor::ones((1, 1, 8, 8), DType::F64, &device()).unwrap();
        let c = composite(&h, &m, &bg).unwrap();
        assert_eq!(c.flatten_all().unwrap().to_vec1::<f64>().unwrap(), h.flatten_all().unwrap().to_vec1::<f64>().unwrap());
    }

    #[test]
    fn composite_matches_scalar_loop() {
        let h = Tensor::randn(0f64, 1., (2, 3, 6, 6), &device()).unwrap();
        let img = Tensor::randn(0f64, 1., (2, 3, 6, 6), &device()).unwrap();
        let m = binary((2, 1, 6, 6));
        let bg = img.broadcast_mul(&m.affine(-1., 1.).unwrap()).unwrap();
        let got = composite(&h, &m, &bg).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let (hv, iv, mv) = (
            h.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            img.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            m.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
        );
        for b in 0..2 {
            for c in 0..3 {
                for p in 0..36 {
                    let i = (b * 3 + c) * 36 + p;
                    let mm = mv[b * 36 + p];
                    let e = hv[i] * mm + iv[i] * (1.0 - mm);
                    assert!((got[i] - e).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn untrained_blend_reproduces_background() {
        let mut store = ParamStore::new(DType::F64, 0);
        let layer = BlendLayer::new(&mut store, "b", 4, 512).unwrap();
        let feats = Tensor::randn(0f64, 1., (1, 4, 16, 16), &device()).unwrap();
        let s = Tensor::randn(0f64, 1., (1, 512), &device()).unwrap();
        let m = Tensor::zeros((1, 1, 16, 16), DType::F64, &device()).unwrap();
        let bg = Tensor::rand(-1f64, 1., (1, 3, 16, 16), &device()).unwrap();
        let out = layer.forward(&feats, &s, &m, &bg).unwrap();
        let d = (out.image - &bg).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let h = Tensor::zeros((1, 3, 8, 8), DType::F64, &device()).unwrap();
        let m = Tensor::zeros((1, 1, 4, 4), DType::F64, &device()).unwrap();
        assert!(composite(&h, &m, &h).is_err());
    }
}
