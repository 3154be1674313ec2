use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Write a checkpoint after every this many epochs.
    pub checkpoint_every: usize,
    /// Write a loss-log line every this many steps.
    pub log_every: usize,
    /// Global gradient-norm bound per update group; off when `None`.
    pub grad_clip: Option<f64>,
    /// Stop after this many total steps, even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 55,
            batch_size: 8,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 1,
            log_every: 1,
            grad_clip: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0 <= self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return bad("need 0 <= beta1 < beta2 < 1");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1");
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return bad("checkpoint_every and log_every must be at least 1");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad("grad_clip must be positive");
            }
        }
        self.weights.validate()
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// `⌈n / batch_size⌉`.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}
