use candle_core::{DType, Tensor};

use super::config::ModelConfig;
use super::layers::{leaky_relu, Conv2d};
use super::params::ParamStore;
use crate::{Error, Result, IMAGE_SIZE};

/// Raw (pre-sigmoid) realism scores, `[B, 1, N, N]`, one per receptive patch.
#[derive(Clone, Debug)]
pub struct PatchMap(pub Tensor);

impl PatchMap {
    pub fn scores(&self) -> &Tensor {
        &self.0
    }

    pub fn into_inner(self) -> Tensor {
        self.0
    }

    /// Side length `N`.
    pub fn size(&self) -> usize {
        self.0.dims()[2]
    }
}

/// Patch discriminator: `disc_layers` stride-2 4×4 convolutions with leaky
/// ReLU, then a 3×3 single-channel head. With four layers a 128×128 image
/// maps to an 8×8 patch map.
#[derive(Debug)]
pub struct Discriminator {
    store: ParamStore,
    layers: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(config: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let mut in_c = 3;
        let mut layers = Vec::with_capacity(config.disc_layers);
        for (i, w) in config.disc_channels().into_iter().enumerate() {
            layers.push(Conv2d::new(&mut store, &format!("discriminator.layer{i}.conv"), in_c, w, 4, 2, 1, true)?);
            in_c = w;
        }
        let head = Conv2d::new(&mut store, "discriminator.head.conv", in_c, 1, 3, 1, 1, true)?;
        Ok(Self { store, layers, head })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Patch-map side predicted by chaining the convolution size rule.
    pub fn patch_size(&self, input: usize) -> Result<usize> {
        let n = self.layers.iter().try_fold(input, |n, l| l.output_size(n))?;
        self.head.output_size(n)
    }

    pub fn forward(&self, image: &Tensor) -> Result<PatchMap> {
        let (_, c, h, w) = image.dims4()?;
        if (c, h, w) != (3, IMAGE_SIZE, IMAGE_SIZE) {
            return Err(Error::shape("discriminator input", "B×3×128×128", format!("{:?}", image.dims())));
        }
        let mut x = image.clone();
        for layer in &self.layers {
            x = leaky_relu(&layer.forward(&x)?)?;
        }
        Ok(PatchMap(self.head.forward(&x)?))
    }
}
