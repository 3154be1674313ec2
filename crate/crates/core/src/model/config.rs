use serde::{Deserialize, Serialize};

use crate::{Error, Result, IMAGE_SIZE, LATENT_DIM};

/// Architecture hyperparameters shared by the three networks.
///
/// Channel widths are derived from `base_channels`: generator stage `i` of
/// `n` has `base · min(8, 2^(n−1−i))` channels, so the default (`base = 64`)
/// gives `{512, 512, 256, 128, 64}` over resolutions `{8, 16, 32, 64, 128}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub stage_resolutions: Vec<usize>,
    pub style_dim: usize,
    pub noise_dim: usize,
    pub disc_layers: usize,
    /// Upper bound on generator parameters.
    pub param_budget: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            stage_resolutions: vec![8, 16, 32, 64, 128],
            style_dim: LATENT_DIM,
            noise_dim: LATENT_DIM,
            disc_layers: 4,
            param_budget: 40_000_000,
        }
    }
}

impl ModelConfig {
    /// Same topology at 1/16 of the default width; trains on a CPU.
    pub fn miniature() -> Self {
        Self {
            base_channels: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.style_dim != LATENT_DIM || self.noise_dim != LATENT_DIM {
            return bad(format!(
                "style_dim and noise_dim must be {LATENT_DIM} (got {}, {})",
                self.style_dim, self.noise_dim
            ));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        let res = &self.stage_resolutions;
        if res.last() != Some(&IMAGE_SIZE) {
            return bad(format!("last stage resolution must be {IMAGE_SIZE}"));
        }
        if res.windows(2).any(|w| w[1] != 2 * w[0]) {
            return bad("stage resolutions must double from one stage to the next".into());
        }
        if self.disc_layers == 0 || IMAGE_SIZE >> self.disc_layers == 0 {
            return bad(format!("disc_layers {} out of range", self.disc_layers));
        }
        Ok(())
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        let n = self.stage_resolutions.len();
        (0..n)
            .map(|i| self.base_channels * (1usize << (n - 1 - i)).min(8))
            .collect()
    }

    /// Spatial size of the learned seed map that `z` is projected to.
    pub fn seed_resolution(&self) -> usize {
        self.stage_resolutions[0]
    }

    /// Widths of the encoder's stem followed by its stride-2 blocks.
    pub fn encoder_channels(&self) -> Vec<usize> {
        let downsamples = (IMAGE_SIZE / self.seed_resolution()).trailing_zeros() as usize;
        (0..=downsamples)
            .map(|i| self.base_channels * (1usize << i).min(8))
            .collect()
    }

    pub fn disc_channels(&self) -> Vec<usize> {
        (0..self.disc_layers)
            .map(|i| self.base_channels * (1usize << i).min(8))
            .collect()
    }
}
