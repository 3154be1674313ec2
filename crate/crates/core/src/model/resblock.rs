use candle_core::Tensor;

use super::adain::StyleAffine;
use super::layers::{leaky_relu, Conv2d};
use super::params::ParamStore;
use crate::{Error, Result};

/// Residual block with two `AdaIN → leaky ReLU → 3×3 conv` passes on the
/// main path and a 1×1 convolution on the skip path:
///
/// `out = skip(x) + conv2(act(adain2(conv1(act(adain1(x, s))), s)))`
///
/// Spatial size is preserved; the block may change the channel count. The
/// main-path convolutions carry no bias (the following instance
/// normalization would cancel it), so zeroing their weights leaves exactly
/// `skip(x)`.
#[derive(Clone, Debug)]
pub struct AdainResBlock {
    adain1: StyleAffine,
    conv1: Conv2d,
    adain2: StyleAffine,
    conv2: Conv2d,
    skip: Conv2d,
}

impl AdainResBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        style_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            adain1: StyleAffine::new(store, &format!("{prefix}.adain1"), style_dim, in_channels)?,
            conv1: Conv2d::new(store, &format!("{prefix}.conv1"), in_channels, out_channels, 3, 1, 1, false)?,
            adain2: StyleAffine::new(store, &format!("{prefix}.adain2"), style_dim, out_channels)?,
            conv2: Conv2d::new(store, &format!("{prefix}.conv2"), out_channels, out_channels, 3, 1, 1, false)?,
            skip: Conv2d::new(store, &format!("{prefix}.skip"), in_channels, out_channels, 1, 1, 0, true)?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    /// Statistics the first AdaIN of this block derives from `style`.
    pub fn style_stats(&self, style: &Tensor) -> Result<(Tensor, Tensor)> {
        self.adain1.stats(style)
    }

    pub fn forward(&self, x: &Tensor, style: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&leaky_relu(&self.adain1.forward(x, style)?)?)?;
        let h = self.conv2.forward(&leaky_relu(&self.adain2.forward(&h, style)?)?)?;
        let skip = self.skip.forward(x)?;
        if skip.dims() != h.dims() {
            return Err(Error::shape(
                "resblock skip path",
                format!("{:?}", h.dims()),
                format!("{:?}", skip.dims()),
            ));
        }
        Ok((skip + h)?)
    }

    pub fn skip(&self) -> &Conv2d {
        &self.skip
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device;
    use candle_core::DType;

    fn block(cin: usize, cout: usize) -> (ParamStore, AdainResBlock) {
        let mut store = ParamStore::new(DType::F64, 9);
        let b = AdainResBlock::new(&mut store, "blk", cin, cout, 512).unwrap();
        (store, b)
    }

    #[test]
    fn preserves_spatial_size() {
        let (_, b) = block(5, 3);
        let s = Tensor::randn(0f64, 1., (2, 512), &device()).unwrap();
        for hw in [4usize, 7, 16] {
            let x = Tensor::randn(0f64, 1., (2, 5, hw, hw), &device()).unwrap();
            assert_eq!(b.forward(&x, &s).unwrap().dims(), &[2, 3, hw, hw]);
        }
    }

    #[test]
    fn zero_main_path_reduces_to_skip() {
        let (store, b) = block(4, 4);
        for name in ["blk.conv1.weight", "blk.conv2.weight"] {
            let v = store.get(name).unwrap();
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let x = Tensor::randn(0f64, 1., (1, 4, 8, 8), &device()).unwrap();
        let s = Tensor::randn(0f64, 1., (1, 512), &device()).unwrap();
        let out = b.forward(&x, &s).unwrap();
        let skip = b.skip().forward(&x).unwrap();
        let d = (out - skip).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(d, 0.0);
    }
}
