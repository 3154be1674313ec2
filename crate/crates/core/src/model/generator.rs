use candle_core::{DType, Tensor};

use super::blend::{BlendLayer, BlendOutput};
use super::config::ModelConfig;
use super::layers::Linear;
use super::params::ParamStore;
use super::pyramid::MaskPyramid;
use super::resblock::AdainResBlock;
use crate::{ensure_finite, Error, Result, IMAGE_SIZE};

/// Hair generator: noise projection, a stack of AdAIN residual stages from
/// 8×8 to 128×128, and the blending output stage.
///
/// `z` only seeds the initial feature map through a learned linear
/// projection; the style vector enters exclusively through AdaIN. Each stage
/// sees its mask-pyramid level as one extra input channel.
#[derive(Debug)]
pub struct Generator {
    config: ModelConfig,
    store: ParamStore,
    seed_proj: Linear,
    seed_channels: usize,
    stages: Vec<AdainResBlock>,
    blend: BlendLayer,
}

impl Generator {
    pub fn new(config: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let channels = config.stage_channels();
        let r0 = config.seed_resolution();
        let seed_channels = channels[0];
        let seed_proj = Linear::new(&mut store, "generator.seed.proj", config.noise_dim, seed_channels * r0 * r0)?;
        let mut stages = Vec::with_capacity(channels.len());
        let mut in_c = seed_channels;
        for (i, &out_c) in channels.iter().enumerate() {
            stages.push(AdainResBlock::new(
                &mut store,
                &format!("generator.stage{i}"),
                in_c + 1,
                out_c,
                config.style_dim,
            )?);
            in_c = out_c;
        }
        let blend = BlendLayer::new(&mut store, "generator.blend", in_c, config.style_dim)?;
        Ok(Self {
            config: config.clone(),
            store,
            seed_proj,
            seed_channels,
            stages,
            blend,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Number of AdaIN stages that [`Self::style_to_stats`] can address:
    /// the residual stages plus the blend block.
    pub fn num_style_stages(&self) -> usize {
        self.stages.len() + 1
    }

    /// `(μ, σ)` the first AdaIN of `stage` derives from `style`; the last
    /// index addresses the blend block.
    pub fn style_to_stats(&self, style: &Tensor, stage: usize) -> Result<(Tensor, Tensor)> {
        if stage < self.stages.len() {
            self.stages[stage].style_stats(style)
        } else if stage == self.stages.len() {
            self.blend.block().style_stats(style)
        } else {
            Err(Error::InvalidArgument(format!(
                "stage {stage} out of range (generator has {})",
                self.num_style_stages()
            )))
        }
    }

    /// Synthesizes `[B, 3, 128, 128]` images from noise `[B, 512]`, style
    /// `[B, 512]`, a mask pyramid and the masked-out background.
    pub fn forward(&self, z: &Tensor, style: &Tensor, masks: &MaskPyramid, background: &Tensor) -> Result<BlendOutput> {
        let b = z.dim(0)?;
        let n = IMAGE_SIZE;
        for (what, t, dim) in [("noise", z, self.config.noise_dim), ("style", style, self.config.style_dim)] {
            if t.dims() != [b, dim] {
                return Err(Error::shape("generator input", format!("{what} [{b}, {dim}]"), format!("{:?}", t.dims())));
            }
        }
        if background.dims() != [b, 3, n, n] {
            return Err(Error::shape("generator background", "B×3×128×128", format!("{:?}", background.dims())));
        }
        if masks.levels().len() != self.stages.len() {
            return Err(Error::shape("mask pyramid levels", self.stages.len(), masks.levels().len()));
        }
        let r0 = self.config.seed_resolution();
        let mut x = self.seed_proj.forward(z)?.reshape((b, self.seed_channels, r0, r0))?;
        let last = self.stages.len() - 1;
        for (i, (stage, level)) in self.stages.iter().zip(masks.levels()).enumerate() {
            let (_, _, h, w) = x.dims4()?;
            if level.dims() != [b, 1, h, w] {
                return Err(Error::shape("mask pyramid level", format!("[{b}, 1, {h}, {w}]"), format!("{:?}", level.dims())));
            }
            x = stage.forward(&Tensor::cat(&[&x, level], 1)?, style)?;
            if i < last {
                x = x.upsample_nearest2d(2 * h, 2 * w)?;
            }
            ensure_finite(&x, format!("generator stage {i}"))?;
        }
        let out = self.blend.forward(&x, style, masks.full(), background)?;
        ensure_finite(&out.image, format!("generator stage {}", self.stages.len()))?;
        Ok(out)
    }
}
