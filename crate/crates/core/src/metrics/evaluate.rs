//! Paired evaluation of a synthesizer over a test set.

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fid, psnr, ssim};
use crate::data::{eval_filter, shuffle, SampleRecord, DEFAULT_MIN_HAIR_FRACTION};
use crate::extractors::ImageEmbedder;
use crate::tasks::{reconstruct, transfer_style, Synthesizer};
use crate::{Error, Result};

pub const DEFAULT_EVAL_PAIRS: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Reconstruction,
    Transfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: EvalTask,
    /// `None` when no embedder was available; see `fid_skipped`.
    pub fid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid_skipped: Option<String>,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub n_pairs: usize,
}

/// Scores `n_pairs` seeded pairs drawn from the records with at least 3%
/// hair. Reconstruction pairs a record with itself; transfer pairs it with a
/// uniformly drawn different record. Outputs are compared with their source
/// for PSNR/SSIM, and the output set with the source set for FID.
pub fn evaluate_task(
    model: &dyn Synthesizer,
    records: &[SampleRecord],
    task: EvalTask,
    n_pairs: usize,
    seed: u64,
    embedder: Option<&dyn ImageEmbedder>,
) -> Result<MetricsReport> {
    let pool = eval_filter(records, DEFAULT_MIN_HAIR_FRACTION)?;
    let min = if task == EvalTask::Transfer { 2 } else { 1 };
    if pool.len() < min {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);
    if n_pairs > pool.len() {
        log::warn!("{n_pairs} pairs requested but only {} records qualify; using all", pool.len());
    }
    let n = n_pairs.min(pool.len());
    if n == 0 {
        return Err(Error::InvalidArgument("n_pairs must be positive".into()));
    }

    let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
    let (mut reals, mut fakes) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (k, &i) in order.iter().take(n).enumerate() {
        let source = pool[i];
        let pair_seed = seed.wrapping_add(k as u64);
        let out = match task {
            EvalTask::Reconstruction => reconstruct(model, source, pair_seed)?,
            EvalTask::Transfer => {
                let mut j = rng.random_range(0..pool.len() - 1);
                if j >= i {
                    j += 1;
                }
                transfer_style(model, source, pool[j], pair_seed)?
            }
        };
        psnr_sum += psnr(source.image(), &out.image)?;
        ssim_sum += ssim(source.image(), &out.image)?;
        if embedder.is_some() {
            reals.push(source.image().clone());
            fakes.push(out.image);
        }
    }

    let (fid_value, fid_skipped) = match embedder {
        Some(e) if n >= 2 => {
            let real = e.embed(&Tensor::cat(&reals, 0)?)?;
            let fake = e.embed(&Tensor::cat(&fakes, 0)?)?;
            (Some(fid(&real, &fake)?), None)
        }
        Some(_) => (None, Some("fewer than 2 pairs".to_string())),
        None => (None, Some("no feature extractor provisioned".to_string())),
    };
    Ok(MetricsReport {
        task,
        fid: fid_value,
        fid_skipped,
        psnr_mean: psnr_sum / n as f64,
        ssim_mean: ssim_sum / n as f64,
        n_pairs: n,
    })
}
