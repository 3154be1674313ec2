//! Networks and their building blocks.

pub mod adain;
pub mod blend;
mod config;
pub mod conv;
mod discriminator;
mod encoder;
mod generator;
pub mod layers;
mod noise;
pub mod params;
mod pyramid;
pub mod resblock;
mod shape;

pub use adain::{adain, instance_stats, StyleAffine, INSTANCE_EPS};
pub use blend::{bounded_activation, composite, BlendLayer, BlendOutput};
pub use config::ModelConfig;
pub use discriminator::{Discriminator, PatchMap};
pub use encoder::{pixel_norm, Encoder};
pub use generator::Generator;
pub use noise::sample_noise;
pub use params::{count_params, Init, ParamStore};
pub use pyramid::MaskPyramid;
pub use resblock::AdainResBlock;
pub use shape::conv_output_size;

use candle_core::{DType, Tensor};

use crate::Result;

/// The three networks trained together.
#[derive(Debug)]
pub struct HairGan {
    pub config: ModelConfig,
    pub generator: Generator,
    pub encoder: Encoder,
    pub discriminator: Discriminator,
}

impl HairGan {
    pub fn new(config: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            generator: Generator::new(config, dtype, seed)?,
            encoder: Encoder::new(config, dtype, seed)?,
            discriminator: Discriminator::new(config, dtype, seed)?,
        })
    }

    pub fn dtype(&self) -> DType {
        self.generator.dtype()
    }

    /// Encodes the reference hair and runs the generator.
    pub fn synthesize(
        &self,
        z: &Tensor,
        reference_hair: &Tensor,
        reference_mask: &Tensor,
        target_mask: &Tensor,
        background: &Tensor,
    ) -> Result<BlendOutput> {
        let style = self.encoder.forward(reference_hair, reference_mask)?;
        let pyramid = MaskPyramid::new(target_mask, &self.config.stage_resolutions)?;
        self.generator.forward(z, &style, &pyramid, background)
    }
}
