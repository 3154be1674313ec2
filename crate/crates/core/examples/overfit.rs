//! Overfits the miniature model on 16 procedural portraits and reports
//! per-image reconstruction PSNR.
//!
//! `cargo run --release -p hairgan --example overfit -- [steps] [out_dir]`

use std::path::PathBuf;
use std::time::Instant;

use hairgan::extractors::IdentityExtractor;
use hairgan::metrics::psnr;
use hairgan::model::ModelConfig;
use hairgan::tasks::{reconstruct, DEFAULT_TASK_SEED};
use hairgan::train::{TrainConfig, Trainer};

fn main() -> hairgan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "overfit_run".into()));
    let records = hairgan::synthetic::records(16, 0)?;
    let config = TrainConfig {
        epochs: steps.div_ceil(2),
        max_steps: Some(steps),
        log_every: 10,
        checkpoint_every: 1_000_000,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&ModelConfig::miniature(), config, Box::new(IdentityExtractor))?;
    let start = Instant::now();
    let summary = trainer.run(&records, &out)?;
    let secs = start.elapsed().as_secs_f64();
    println!("{} steps in {secs:.1}s ({:.3}s/step)", summary.steps, secs / summary.steps as f64);
    for r in &records {
        let y = reconstruct(trainer.model(), r, DEFAULT_TASK_SEED)?;
        println!("{} psnr {:.2}", r.id(), psnr(r.image(), &y.image)?);
    }
    Ok(())
}
