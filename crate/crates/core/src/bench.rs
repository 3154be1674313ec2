//! Single-stream throughput benchmark.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{load_record, ManifestEntry};
use crate::tasks::{reconstruct, Synthesizer, DEFAULT_TASK_SEED};
use crate::{imageio, Error, Result, IMAGE_SIZE};

pub const DEFAULT_BENCH_IMAGES: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub images_per_second: f64,
    pub n_images: usize,
    pub param_count_generator: usize,
    pub resolution: usize,
    pub total_seconds: f64,
}

/// Times `n_images` iterations of read → preprocess → reconstruct → write
/// PNG, cycling through `inputs`. The model is loaded by the caller, so its
/// load time is excluded.
pub fn benchmark_fps(
    model: &dyn Synthesizer,
    inputs: &[ManifestEntry],
    n_images: usize,
    io_dir: &Path,
) -> Result<BenchReport> {
    if inputs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if n_images == 0 {
        return Err(Error::InvalidArgument("n_images must be positive".into()));
    }
    std::fs::create_dir_all(io_dir).map_err(|e| Error::io(io_dir, e))?;
    let start = Instant::now();
    for i in 0..n_images {
        let entry = &inputs[i % inputs.len()];
        let record = load_record(entry)?;
        let out = reconstruct(model, &record, DEFAULT_TASK_SEED)?;
        let path = io_dir.join(format!("{:05}_{}.png", i, entry.id));
        imageio::save_rgb(&imageio::tensor_to_rgb(&out.image)?, &path)?;
    }
    let total_seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        images_per_second: n_images as f64 / total_seconds,
        n_images,
        param_count_generator: model.generator_param_count(),
        resolution: IMAGE_SIZE,
        total_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::IdentitySynthesizer;

    #[test]
    fn smoke_run_reports_positive_fps() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, masks) = crate::synthetic::write_corpus(dir.path(), 3, 0, 128).unwrap();
        let entries = crate::data::ingest_corpus(&imgs, &masks, None).unwrap();
        let r = benchmark_fps(&IdentitySynthesizer, &entries, 10, &dir.path().join("out")).unwrap();
        assert!(r.images_per_second.is_finite() && r.images_per_second > 0.0);
        assert_eq!(r.n_images, 10);
        assert_eq!(std::fs::read_dir(dir.path().join("out")).unwrap().count(), 10);
    }

    #[test]
    fn unwritable_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        std::fs::write(&file, b"x").unwrap();
        let (imgs, masks) = crate::synthetic::write_corpus(dir.path(), 1, 0, 128).unwrap();
        let entries = crate::data::ingest_corpus(&imgs, &masks, None).unwrap();
        assert!(benchmark_fps(&IdentitySynthesizer, &entries, 1, &file.join("sub")).is_err());
    }
}
