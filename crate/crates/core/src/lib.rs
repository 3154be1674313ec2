//! Mask-conditioned hair synthesis.
//!
//! A style encoder summarizes a reference hair region into a 512-d style
//! vector, an AdaIN residual generator synthesizes hair under a target mask,
//! and a hair-blending output stage composites it over the untouched
//! background. A patch discriminator supplies the adversarial signal during
//! pseudo-supervised training, where each image's own hair is its reference.
//!
//! The crate is organized along the pipeline:
//!
//! * [`data`]: corpus ingestion, preprocessing to 128×128, splits, filters.
//! * [`model`]: encoder, generator (with [`model::blend`]), discriminator and
//!   their building blocks.
//! * [`losses`]: pixel, perceptual, style and adversarial terms.
//! * [`train`]: Adam, the alternating update schedule, checkpoint/resume.
//! * [`tasks`]: reconstruction, style transfer and shape editing.
//! * [`metrics`] and [`bench`]: PSNR, SSIM, FID and the throughput harness.
//!
//! ```
//! use hairgan::model::conv_output_size;
//!
//! // 4×4 stride-2 convolutions halve the resolution.
//! assert_eq!(conv_output_size(128, 1, 4, 2).unwrap(), 64);
//! ```

pub mod bench;
pub mod checkpoint;
pub mod data;
mod error;
pub mod extractors;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};

/// Working resolution of every network.
pub const IMAGE_SIZE: usize = 128;

/// Dimensionality of style and noise vectors.
pub const LATENT_DIM: usize = 512;

pub(crate) fn device() -> candle_core::Device {
    candle_core::Device::Cpu
}

/// Fails with [`Error::NonFinite`] when `t` contains a NaN or infinity.
pub(crate) fn ensure_finite(t: &candle_core::Tensor, what: impl Into<String>) -> Result<()> {
    let total = t
        .flatten_all()?
        .to_dtype(candle_core::DType::F64)?
        .sum_all()?
        .to_scalar::<f64>()?;
    if total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

// Each chapter of the guide is compiled as a doc-test so its snippets stay
// in sync with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/adain.md")]
    mod adain {}
    #[doc = include_str!("../../../book/src/generator.md")]
    mod generator {}
    #[doc = include_str!("../../../book/src/discriminator.md")]
    mod discriminator {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    mod tasks {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/extractors.md")]
    mod extractors {}
}
