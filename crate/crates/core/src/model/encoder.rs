use candle_core::{DType, Tensor};

use super::config::ModelConfig;
use super::layers::{leaky_relu, Conv2d, Linear};
use super::params::{Init, ParamStore};
use crate::{ensure_finite, Error, Result, IMAGE_SIZE};

// Small: with zero-initialized biases the pre-norm RMS starts near 5e-3.
const PIXEL_NORM_EPS: f64 = 1e-12;

/// `y / sqrt(mean(y²) + ε)` along the feature axis.
pub fn pixel_norm(y: &Tensor) -> Result<Tensor> {
    let ms = y.sqr()?.mean_keepdim(1)?;
    Ok(y.broadcast_div(&(ms + PIXEL_NORM_EPS)?.sqrt()?)?)
}

/// Uniform weights with zero bias. Random biases dominate the globally
/// pooled features and make every input encode to nearly the same vector.
fn conv(store: &mut ParamStore, name: &str, geometry: (usize, usize, usize, usize, usize)) -> Result<Conv2d> {
    let bound = 1.0 / ((geometry.0 * geometry.2 * geometry.2) as f64).sqrt();
    Conv2d::with_init(store, name, geometry, Init::Uniform(bound), Some(Init::Const(0.0)))
}

/// Style encoder: summarizes a masked hair region into a style vector.
///
/// Input is the hair region with the mask appended as a fourth channel.
/// A 3×3 stem is followed by stride-2 4×4 blocks down to 8×8, global
/// average pooling and a linear map to `style_dim`. The result is scaled to
/// unit RMS per sample: the encoder is trained jointly with the style loss,
/// which an unnormalized head could shrink towards zero.
#[derive(Debug)]
pub struct Encoder {
    store: ParamStore,
    stem: Conv2d,
    blocks: Vec<Conv2d>,
    head: Linear,
}

impl Encoder {
    pub fn new(config: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let widths = config.encoder_channels();
        let stem = conv(&mut store, "encoder.stem.conv", (4, widths[0], 3, 1, 1))?;
        let blocks = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| conv(&mut store, &format!("encoder.block{i}.conv"), (w[0], w[1], 4, 2, 1)))
            .collect::<Result<Vec<_>>>()?;
        let last = *widths.last().unwrap();
        let head = Linear::with_init(
            &mut store,
            "encoder.head.linear",
            last,
            config.style_dim,
            Init::Uniform(1.0 / (last as f64).sqrt()),
            Init::Const(0.0),
        )?;
        Ok(Self {
            store,
            stem,
            blocks,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Style vectors `[B, style_dim]` for hair regions `[B, 3, 128, 128]`
    /// and masks `[B, 1, 128, 128]`.
    pub fn forward(&self, hair_region: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = hair_region.dims4()?;
        if (c, h, w) != (3, IMAGE_SIZE, IMAGE_SIZE) || mask.dims() != [b, 1, h, w] {
            return Err(Error::shape(
                "encoder input",
                "hair B×3×128×128 with mask B×1×128×128",
                format!("{:?} / {:?}", hair_region.dims(), mask.dims()),
            ));
        }
        let mut x = leaky_relu(&self.stem.forward(&Tensor::cat(&[hair_region, mask], 1)?)?)?;
        for block in &self.blocks {
            x = leaky_relu(&block.forward(&x)?)?;
        }
        let pooled = x.mean((2, 3))?;
        let style = pixel_norm(&self.head.forward(&pooled)?)?;
        ensure_finite(&style, "encoder output")?;
        Ok(style)
    }
}
