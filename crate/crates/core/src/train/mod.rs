//! Pseudo-supervised adversarial training.
//!
//! Every image is its own style reference, so the original serves as ground
//! truth for the pixel and perceptual terms. Each step performs one
//! discriminator update followed by one joint generator/encoder update, with
//! separate Adam instances.

mod adam;
mod config;

pub use adam::{Adam, ADAM_EPS};
pub use config::TrainConfig;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::data::{shuffle, SampleRecord, SplitRng};
use crate::extractors::FeatureExtractor;
use crate::losses::{
    discriminator_loss, generator_adversarial_loss, perceptual_loss, pixel_loss, scalar, style_loss,
    total_generator_loss, total_generator_loss_tensor, GeneratorTerms, LossReport,
};
use crate::model::{sample_noise, HairGan, MaskPyramid, ModelConfig};
use crate::{ensure_finite, Error, Result};

pub const LOSS_LOG: &str = "loss_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_CHECKPOINT: &str = "last.safetensors";

const KEY_TRAIN_CONFIG: &str = "train_config";
const KEY_TRAIN_STATE: &str = "train_state";

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Noise seed of a global step.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    mix(seed ^ mix(step as u64))
}

/// Record visiting order of an epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitRng::seed_from_u64(mix(seed.rotate_left(17) ^ mix(epoch as u64 + 1)));
    shuffle(&mut order, &mut rng);
    order
}

/// Stacked inputs of one self-reconstruction batch.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub ids: Vec<String>,
    pub z: Tensor,
    /// Style source: each record's own hair region and mask.
    pub hair: Tensor,
    pub masks: Tensor,
    pub pyramid: MaskPyramid,
    pub backgrounds: Tensor,
    pub targets: Tensor,
}

pub fn make_training_batch(
    records: &[&SampleRecord],
    config: &ModelConfig,
    noise_seed: u64,
    dtype: DType,
) -> Result<TrainingBatch> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let stack = |f: fn(&SampleRecord) -> &Tensor| -> Result<Tensor> {
        let parts: Vec<&Tensor> = records.iter().map(|r| f(r)).collect();
        Ok(Tensor::cat(&parts, 0)?.to_dtype(dtype)?)
    };
    let masks = stack(SampleRecord::mask)?;
    Ok(TrainingBatch {
        ids: records.iter().map(|r| r.id().to_owned()).collect(),
        z: sample_noise(records.len(), config.noise_dim, Some(noise_seed), dtype)?,
        hair: stack(SampleRecord::hair_region)?,
        pyramid: MaskPyramid::new(&masks, &config.stage_resolutions)?,
        masks,
        backgrounds: stack(SampleRecord::background)?,
        targets: stack(SampleRecord::image)?,
    })
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossLogLine {
    pub step: usize,
    pub epoch: usize,
    pub pixel: f64,
    pub style: f64,
    pub perceptual: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub total_g: f64,
}

impl LossLogLine {
    pub fn new(step: usize, epoch: usize, r: &LossReport) -> Self {
        Self {
            step,
            epoch,
            pixel: r.pixel,
            style: r.style,
            perceptual: r.perceptual,
            adv_g: r.adversarial_g,
            adv_d: r.adversarial_d,
            total_g: r.total_g,
        }
    }
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossLogLine>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
struct TrainState {
    step: usize,
    adam_ge_steps: u64,
    adam_d_steps: u64,
}

/// Result of [`Trainer::run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub final_checkpoint: PathBuf,
    pub steps: usize,
    pub history: Vec<LossLogLine>,
}

/// Owns the model, both optimizers and the step counter.
pub struct Trainer {
    model: HairGan,
    config: TrainConfig,
    opt_ge: Adam,
    opt_d: Adam,
    step: usize,
    extractor: Box<dyn FeatureExtractor>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer").field("config", &self.config).field("step", &self.step).finish_non_exhaustive()
    }
}

impl Trainer {
    /// Fresh model initialized from `config.seed`.
    pub fn new(model_config: &ModelConfig, config: TrainConfig, extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        model_config.validate()?;
        let model = HairGan::new(model_config, DType::F32, config.seed)?;
        Self::with_model(model, config, extractor)
    }

    pub fn with_model(model: HairGan, config: TrainConfig, extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        config.validate()?;
        let opt_ge = Adam::new(&[model.generator.params(), model.encoder.params()], config.lr, config.beta1, config.beta2)?;
        let opt_d = Adam::new(&[model.discriminator.params()], config.lr, config.beta1, config.beta2)?;
        Ok(Self { model, config, opt_ge, opt_d, step: 0, extractor })
    }

    pub fn model(&self) -> &HairGan {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Changes the stopping rule or logging cadence, e.g. after a resume.
    pub fn set_schedule(&mut self, epochs: usize, max_steps: Option<usize>) {
        self.config.epochs = epochs;
        self.config.max_steps = max_steps;
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> usize {
        self.step
    }

    /// One discriminator update then one generator/encoder update.
    pub fn train_step(&mut self, batch: &TrainingBatch) -> Result<LossReport> {
        let m = &self.model;
        let step = self.step + 1;
        let check = |t: &Tensor, term: &str| -> Result<f64> {
            let v = scalar(t)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("{term} = {v} at step {step} (batch {:?})", batch.ids)))
            }
        };

        let style = m.encoder.forward(&batch.hair, &batch.masks)?;
        let fake = m.generator.forward(&batch.z, &style, &batch.pyramid, &batch.backgrounds)?.image;

        let d_real = m.discriminator.forward(&batch.targets)?;
        let d_fake = m.discriminator.forward(&fake.detach())?;
        let loss_d = discriminator_loss(&d_real, &d_fake)?;
        let adv_d = check(&loss_d, "adversarial_d")?;
        let mut grads = self.opt_d.gradients(&loss_d.backward()?);
        if let Some(c) = self.config.grad_clip {
            Adam::clip(&mut grads, c)?;
        }
        self.opt_d.step(&grads)?;

        let fake_hair = fake.broadcast_mul(&batch.masks)?;
        let terms = GeneratorTerms {
            pixel: pixel_loss(&batch.targets, &fake)?,
            style: style_loss(&batch.hair, &fake_hair, &batch.masks, &batch.masks, &m.encoder)?,
            perceptual: perceptual_loss(&batch.targets, &fake, self.extractor.as_ref())?,
            adversarial: generator_adversarial_loss(&m.discriminator.forward(&fake)?)?,
        };
        let values = GeneratorTerms {
            pixel: check(&terms.pixel, "pixel")?,
            style: check(&terms.style, "style")?,
            perceptual: check(&terms.perceptual, "perceptual")?,
            adversarial: check(&terms.adversarial, "adversarial_g")?,
        };
        let total = total_generator_loss_tensor(&terms, &self.config.weights)?;
        let total_g = total_generator_loss(&values, &self.config.weights)?;
        let mut grads = self.opt_ge.gradients(&total.backward()?);
        if let Some(c) = self.config.grad_clip {
            Adam::clip(&mut grads, c)?;
        }
        self.opt_ge.step(&grads)?;
        self.step = step;

        Ok(LossReport {
            pixel: values.pixel,
            style: values.style,
            perceptual: values.perceptual,
            adversarial_g: values.adversarial,
            adversarial_d: adv_d,
            total_g,
        })
    }

    fn check_params_finite(&self) -> Result<()> {
        let m = &self.model;
        for store in [m.generator.params(), m.encoder.params(), m.discriminator.params()] {
            for (name, var) in store.iter() {
                ensure_finite(var.as_tensor(), format!("parameter {name} at step {}", self.step))?;
            }
        }
        Ok(())
    }

    /// Trains until `epochs` are complete or `max_steps` total steps are
    /// reached, writing the loss log and checkpoints under `out_dir`.
    /// Returns the path of the final checkpoint.
    pub fn run(&mut self, records: &[SampleRecord], out_dir: &Path) -> Result<RunSummary> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = records.len();
        let per_epoch = self.config.steps_per_epoch(n);
        let total = self.config.epochs * per_epoch;
        let stop = self.config.max_steps.map_or(total, |m| m.min(total));
        let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let mut log = self.open_log(&out_dir.join(LOSS_LOG))?;
        let mut history = Vec::new();
        let b = self.config.batch_size;

        while self.step < stop {
            let epoch = self.step / per_epoch;
            let index = self.step % per_epoch;
            let order = epoch_order(n, self.config.seed, epoch);
            let chosen: Vec<&SampleRecord> = order[index * b..((index + 1) * b).min(n)].iter().map(|&i| &records[i]).collect();
            let batch = make_training_batch(&chosen, &self.model.config, step_seed(self.config.seed, self.step), DType::F32)?;
            let report = self.train_step(&batch)?;
            let line = LossLogLine::new(self.step, epoch, &report);
            history.push(line);
            if self.step.is_multiple_of(self.config.log_every) {
                self.check_params_finite()?;
                writeln!(log, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(out_dir, e))?;
                log.flush().map_err(|e| Error::io(out_dir, e))?;
                log::info!(
                    "step {} epoch {epoch}: total_g {:.4} pixel {:.4} style {:.4} adv_d {:.4}",
                    self.step,
                    report.total_g,
                    report.pixel,
                    report.style,
                    report.adversarial_d
                );
            }
            if index + 1 == per_epoch && (epoch + 1).is_multiple_of(self.config.checkpoint_every) {
                self.save(&ckpt_dir.join(format!("epoch_{:04}.safetensors", epoch + 1)))?;
            }
        }
        let final_checkpoint = ckpt_dir.join(LAST_CHECKPOINT);
        self.save(&final_checkpoint)?;
        Ok(RunSummary { final_checkpoint, steps: self.step, history })
    }

    /// Opens the loss log for appending, dropping lines past the current
    /// step so a resumed run continues without gaps or repeats.
    fn open_log(&self, path: &Path) -> Result<File> {
        let kept: Vec<LossLogLine> = if self.step > 0 && path.exists() {
            read_loss_log(path)?.into_iter().filter(|l| l.step <= self.step).collect()
        } else {
            Vec::new()
        };
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        for l in kept {
            writeln!(f, "{}", serde_json::to_string(&l)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(f)
    }

    /// Full training checkpoint: all three networks, both optimizers, the
    /// configs and the step counter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let m = &self.model;
        let mut tensors = checkpoint::store_tensors(m.generator.params());
        tensors.extend(checkpoint::store_tensors(m.encoder.params()));
        tensors.extend(checkpoint::store_tensors(m.discriminator.params()));
        tensors.extend(self.opt_ge.state_tensors("ge"));
        tensors.extend(self.opt_d.state_tensors("d"));
        let mut meta: HashMap<String, String> = checkpoint::model_metadata(m)?;
        meta.insert(KEY_TRAIN_CONFIG.into(), serde_json::to_string(&self.config)?);
        let state = TrainState { step: self.step, adam_ge_steps: self.opt_ge.steps(), adam_d_steps: self.opt_d.steps() };
        meta.insert(KEY_TRAIN_STATE.into(), serde_json::to_string(&state)?);
        checkpoint::save(path, &tensors, meta)
    }

    /// Restores a training checkpoint written by [`Trainer::save`].
    pub fn resume(path: &Path, extractor: Box<dyn FeatureExtractor>) -> Result<Self> {
        let ckpt: Checkpoint = checkpoint::load(path)?;
        let model = checkpoint::model_from_checkpoint(&ckpt)?;
        if !ckpt.tensors.keys().any(|k| k.starts_with("discriminator.")) {
            return Err(Error::Checkpoint(format!("{} holds no training state", path.display())));
        }
        let config: TrainConfig = serde_json::from_str(ckpt.meta(KEY_TRAIN_CONFIG)?)?;
        let state: TrainState = serde_json::from_str(ckpt.meta(KEY_TRAIN_STATE)?)?;
        let mut trainer = Self::with_model(model, config, extractor)?;
        trainer.opt_ge.load_state("ge", &ckpt.tensors, state.adam_ge_steps)?;
        trainer.opt_d.load_state("d", &ckpt.tensors, state.adam_d_steps)?;
        trainer.step = state.step;
        Ok(trainer)
    }
}

/// Trains a fresh model and returns the final checkpoint path.
pub fn train(
    records: &[SampleRecord],
    model_config: &ModelConfig,
    config: TrainConfig,
    extractor: Box<dyn FeatureExtractor>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let mut trainer = Trainer::new(model_config, config, extractor)?;
    Ok(trainer.run(records, out_dir)?.final_checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractors::IdentityExtractor;
    use crate::synthetic;

    fn trainer(seed: u64, batch: usize) -> Trainer {
        let cfg = TrainConfig { seed, batch_size: batch, ..Default::default() };
        Trainer::new(&ModelConfig::miniature(), cfg, Box::new(IdentityExtractor)).unwrap()
    }

    #[test]
    fn batch_is_self_aligned_with_fresh_noise() {
        let recs = synthetic::records(3, 0).unwrap();
        let refs: Vec<&SampleRecord> = recs.iter().collect();
        let cfg = ModelConfig::miniature();
        let a = make_training_batch(&refs, &cfg, step_seed(0, 0), DType::F32).unwrap();
        let b = make_training_batch(&refs, &cfg, step_seed(0, 1), DType::F32).unwrap();
        assert_eq!(a.ids, recs.iter().map(|r| r.id().to_string()).collect::<Vec<_>>());
        assert_eq!(a.targets.dims(), &[3, 3, 128, 128]);
        let hair0 = a.hair.get(1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(hair0, recs[1].hair_region().flatten_all().unwrap().to_vec1::<f32>().unwrap());
        assert_ne!(a.z.to_vec2::<f32>().unwrap(), b.z.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn epoch_orders_are_seeded_permutations() {
        let a = epoch_order(10, 3, 0);
        assert_eq!(a, epoch_order(10, 3, 0));
        assert_ne!(a, epoch_order(10, 3, 1));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn step_updates_are_isolated_and_finite() {
        let recs = synthetic::records(2, 1).unwrap();
        let refs: Vec<&SampleRecord> = recs.iter().collect();
        let mut t = trainer(0, 2);
        let batch = make_training_batch(&refs, &t.model.config, 5, DType::F32).unwrap();
        let g0 = t.model.generator.params().fingerprint().unwrap();
        let e0 = t.model.encoder.params().fingerprint().unwrap();
        let d0 = t.model.discriminator.params().fingerprint().unwrap();

        // Run the D half alone by zeroing G/E learning rate.
        t.opt_ge.lr = 0.0;
        let r = t.train_step(&batch).unwrap();
        for v in [r.pixel, r.style, r.perceptual, r.adversarial_g, r.adversarial_d, r.total_g] {
            assert!(v.is_finite());
        }
        assert_eq!(t.model.generator.params().fingerprint().unwrap(), g0);
        assert_eq!(t.model.encoder.params().fingerprint().unwrap(), e0);
        let d1 = t.model.discriminator.params().fingerprint().unwrap();
        assert_ne!(d1, d0);

        t.opt_ge.lr = 1e-4;
        t.opt_d.lr = 0.0;
        t.train_step(&batch).unwrap();
        assert_eq!(t.model.discriminator.params().fingerprint().unwrap(), d1);
        assert_ne!(t.model.generator.params().fingerprint().unwrap(), g0);
        assert_ne!(t.model.encoder.params().fingerprint().unwrap(), e0);
    }

    #[test]
    fn run_counts_steps_and_logs_every_one() {
        let dir = tempfile::tempdir().unwrap();
        let recs = synthetic::records(4, 2).unwrap();
        let mut t = trainer(1, 2);
        t.set_schedule(2, None);
        let summary = t.run(&recs, dir.path()).unwrap();
        assert_eq!(summary.steps, 4);
        let log = read_loss_log(&dir.path().join(LOSS_LOG)).unwrap();
        assert_eq!(log.iter().map(|l| l.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert_eq!(log.iter().map(|l| l.epoch).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
        assert!(dir.path().join(CHECKPOINT_DIR).join("epoch_0001.safetensors").is_file());
        assert!(summary.final_checkpoint.is_file());
    }

    #[test]
    fn resume_requires_training_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let m = HairGan::new(&ModelConfig::miniature(), DType::F32, 0).unwrap();
        checkpoint::export_weights(&m, &path).unwrap();
        assert!(Trainer::resume(&path, Box::new(IdentityExtractor)).is_err());
    }
}
