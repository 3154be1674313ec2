use std::collections::HashSet;
use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::DType;
use hairgan::bench::benchmark_fps;
use hairgan::checkpoint::{self, export_weights, load_model};
use hairgan::data::{self, read_manifest, read_split, ManifestEntry, SampleRecord};
use hairgan::extractors::{FeatureExtractor, IdentityExtractor, ImageEmbedder, InceptionPool, PooledPixelEmbedder, Vgg19Features};
use hairgan::metrics::{evaluate_task, EvalTask};
use hairgan::model::{HairGan, ModelConfig};
use hairgan::tasks::{self, EditRequest, Synthesizer, DEFAULT_TASK_SEED};
use hairgan::train::{TrainConfig, Trainer};
use hairgan::{imageio, synthetic};

use crate::{
    BenchArgs, Cli, Command, EvalArgs, EvalTaskArg, ExportArgs, ExtractorArgs, ModelArgs, Perceptual, PlotArgs,
    PrepareArgs, RecordArgs, ResumeArgs, ServeArgs, SplitArgs, Subset, SynthArgs, TaskCommand, TrainArgs,
    TrainOverrides,
};

type CmdResult<T = ()> = Result<T, Box<dyn StdError>>;

pub(crate) const MANIFEST: &str = "manifest.jsonl";
pub(crate) const SPLIT: &str = "split.json";

pub(crate) fn run(cli: Cli) -> CmdResult {
    let out = cli.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    match cli.command {
        Command::Prepare(a) => prepare(a, out),
        Command::Split(a) => split(a, cli.seed.unwrap_or(0), out),
        Command::Train(a) => train(a, cli.seed, out),
        Command::Resume(a) => resume(a, out),
        Command::Task(t) => task(t, cli.seed.unwrap_or(DEFAULT_TASK_SEED), out),
        Command::Eval(a) => eval(a, cli.seed.unwrap_or(DEFAULT_TASK_SEED), out),
        Command::Bench(a) => bench(a, cli.seed.unwrap_or(0), out),
        Command::Serve(a) => serve(a, cli.seed),
        Command::ExportWeights(a) => export(a, out),
        Command::Plot(a) => plot(a, out),
        Command::Synth(a) => synth(a, cli.seed.unwrap_or(0), out),
    }
}

fn prepare(a: PrepareArgs, out: &Path) -> CmdResult {
    let path = out.join(MANIFEST);
    let entries = data::ingest_corpus(&a.images, &a.masks, Some(&path))?;
    println!("{} pairs -> {}", entries.len(), path.display());
    Ok(())
}

fn split(a: SplitArgs, seed: u64, out: &Path) -> CmdResult {
    let ids: Vec<String> = read_manifest(&a.manifest)?.into_iter().map(|e| e.id).collect();
    let s = data::make_split(&ids, a.train_fraction, seed)?;
    let path = out.join(SPLIT);
    data::write_split(&s, &path)?;
    println!("{} train / {} test -> {}", s.train_ids.len(), s.test_ids.len(), path.display());
    Ok(())
}

/// Manifest entries, narrowed to one side of a split when one is given.
fn entries(r: &RecordArgs, subset: Subset) -> CmdResult<Vec<ManifestEntry>> {
    let all = read_manifest(&r.manifest)?;
    let Some(split_path) = &r.split else {
        return Ok(all);
    };
    let s = read_split(split_path)?;
    let keep: HashSet<&String> = match subset {
        Subset::Train => s.train_ids.iter().collect(),
        Subset::Test => s.test_ids.iter().collect(),
    };
    Ok(all.into_iter().filter(|e| keep.contains(&e.id)).collect())
}

fn records(r: &RecordArgs, subset: Subset) -> CmdResult<Vec<SampleRecord>> {
    Ok(data::load_records(&entries(r, subset)?)?)
}

fn extractor(a: &ExtractorArgs) -> CmdResult<Box<dyn FeatureExtractor>> {
    Ok(match a.perceptual {
        Perceptual::Vgg => Box::new(Vgg19Features::load(&a.vgg_weights, DType::F32)?),
        Perceptual::Identity => {
            log::warn!("identity perceptual extractor: the perceptual term equals the pixel term");
            Box::new(IdentityExtractor)
        }
    })
}

/// File config first, then flag overrides, then the global seed.
pub fn train_config(file: Option<&Path>, o: &TrainOverrides, seed: Option<u64>) -> CmdResult<TrainConfig> {
    let mut c = match file {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident).+ <- $flag:ident) => {
            if let Some(v) = o.$flag {
                c.$($field).+ = v;
            }
        };
    }
    apply!(lr <- lr);
    apply!(beta1 <- beta1);
    apply!(beta2 <- beta2);
    apply!(epochs <- epochs);
    apply!(batch_size <- batch_size);
    apply!(weights.lambda_pixel <- lambda_pixel);
    apply!(weights.lambda_style <- lambda_style);
    apply!(weights.lambda_perceptual <- lambda_perceptual);
    apply!(weights.lambda_adversarial <- lambda_adversarial);
    apply!(checkpoint_every <- checkpoint_every);
    apply!(log_every <- log_every);
    if o.grad_clip.is_some() {
        c.grad_clip = o.grad_clip;
    }
    if o.max_steps.is_some() {
        c.max_steps = o.max_steps;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn model_config(a: &TrainArgs) -> CmdResult<ModelConfig> {
    let cfg = if a.miniature {
        ModelConfig::miniature()
    } else if let Some(p) = &a.model_config {
        let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
    } else {
        ModelConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs, seed: Option<u64>, out: &Path) -> CmdResult {
    let config = train_config(a.config.as_deref(), &a.overrides, seed)?;
    let mcfg = model_config(&a)?;
    let ext = extractor(&a.extractor)?;
    let recs = records(&a.records, a.subset)?;
    fs::write(out.join("train_config.toml"), config.to_toml()?)?;
    log::info!("training on {} records: {config:?}", recs.len());
    let mut trainer = Trainer::new(&mcfg, config, ext)?;
    let summary = trainer.run(&recs, out)?;
    println!("{} steps -> {}", summary.steps, summary.final_checkpoint.display());
    Ok(())
}

fn resume(a: ResumeArgs, out: &Path) -> CmdResult {
    let mut trainer = Trainer::resume(&a.checkpoint, extractor(&a.extractor)?)?;
    if a.epochs.is_some() || a.max_steps.is_some() {
        let c = trainer.config();
        let epochs = a.epochs.unwrap_or(c.epochs);
        let max_steps = a.max_steps.or(c.max_steps);
        trainer.set_schedule(epochs, max_steps);
    }
    let recs = records(&a.records, a.subset)?;
    log::info!("resuming at step {} on {} records", trainer.step(), recs.len());
    let summary = trainer.run(&recs, out)?;
    println!("{} steps -> {}", summary.steps, summary.final_checkpoint.display());
    Ok(())
}

struct Loaded {
    model: HairGan,
    records: Vec<SampleRecord>,
}

fn load(m: &ModelArgs) -> CmdResult<Loaded> {
    Ok(Loaded {
        model: load_model(&m.checkpoint)?,
        records: data::load_records(&read_manifest(&m.manifest)?)?,
    })
}

impl Loaded {
    fn find(&self, id: &str) -> CmdResult<&SampleRecord> {
        self.records
            .iter()
            .find(|r| r.id() == id)
            .ok_or_else(|| format!("no record with id {id:?} in the manifest").into())
    }
}

fn task(t: TaskCommand, seed: u64, out: &Path) -> CmdResult {
    let (model, source, reference, mask) = match &t {
        TaskCommand::Reconstruct { model, source } => (model, source, None, None),
        TaskCommand::Transfer { model, source, reference } => (model, source, Some(reference), None),
        TaskCommand::Edit { model, source, reference, mask } => (model, source, reference.as_ref(), Some(mask)),
        TaskCommand::Batch { model, requests } => {
            let l = load(model)?;
            let specs = tasks::read_requests(requests)?;
            for p in tasks::run_batch(&l.model, &l.records, &specs, out)? {
                println!("{}", p.display());
            }
            return Ok(());
        }
    };
    let l = load(model)?;
    let req = EditRequest {
        source: l.find(source)?,
        reference: reference.map(|r| l.find(r)).transpose()?,
        edited_mask: mask.map(|p| tasks::load_binary_mask(p)).transpose()?,
        seed: Some(seed),
    };
    let result = req.run(&l.model)?;
    let path = out.join(tasks::output_name(source, reference.map(String::as_str), req.kind()));
    imageio::save_rgb(&imageio::tensor_to_rgb(&result.image)?, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn eval(a: EvalArgs, seed: u64, out: &Path) -> CmdResult {
    let recs = records(&a.records, a.subset)?;
    let model: Box<dyn Synthesizer> = match &a.checkpoint {
        Some(p) => Box::new(load_model(p)?),
        None => Box::new(tasks::IdentitySynthesizer),
    };
    let embedder: Option<Box<dyn ImageEmbedder>> = match (&a.inception_weights, a.pixel_fid) {
        (Some(p), _) => Some(Box::new(InceptionPool::load(p, DType::F32)?)),
        (None, true) => Some(Box::new(PooledPixelEmbedder { grid: 8 })),
        (None, false) => None,
    };
    let task = match a.task {
        EvalTaskArg::Reconstruction => EvalTask::Reconstruction,
        EvalTaskArg::Transfer => EvalTask::Transfer,
    };
    let report = evaluate_task(model.as_ref(), &recs, task, a.pairs, seed, embedder.as_deref())?;
    let json = serde_json::to_string_pretty(&report)?;
    let name = match task {
        EvalTask::Reconstruction => "eval_reconstruction.json",
        EvalTask::Transfer => "eval_transfer.json",
    };
    fs::write(out.join(name), &json)?;
    println!("{json}");
    Ok(())
}

fn bench(a: BenchArgs, seed: u64, out: &Path) -> CmdResult {
    let inputs = read_manifest(&a.manifest)?;
    let model = match &a.checkpoint {
        Some(p) => load_model(p)?,
        None => HairGan::new(&ModelConfig::default(), DType::F32, seed)?,
    };
    let report = benchmark_fps(&model, &inputs, a.images, &out.join("bench_io"))?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(out.join("bench.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn serve(a: ServeArgs, seed: Option<u64>) -> CmdResult {
    if a.parallelism == 0 {
        return Err("--parallelism must be at least 1".into());
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let state = crate::service::AppState::new(a.parallelism, seed);
        let loader = state.clone();
        let path = a.checkpoint.clone();
        tokio::task::spawn_blocking(move || match load_model(&path) {
            Ok(model) => {
                if let Err(e) = loader.install(Arc::new(model)) {
                    log::error!("cannot install model: {e}");
                }
            }
            Err(e) => log::error!("cannot load {}: {e}", path.display()),
        });
        let app = crate::service::router(state, a.cors_origin.as_deref())?;
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn export(a: ExportArgs, out: &Path) -> CmdResult {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let model = checkpoint::model_from_checkpoint(&ckpt)?;
    let path = out.join(&a.output);
    export_weights(&model, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn plot(a: PlotArgs, out: &Path) -> CmdResult {
    let lines = hairgan::train::read_loss_log(&a.log)?;
    let path = out.join(&a.output);
    crate::plot::loss_curves(&lines, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn synth(a: SynthArgs, seed: u64, out: &Path) -> CmdResult {
    let root: PathBuf = out.join("corpus");
    let (images, masks) = synthetic::write_corpus(&root, a.count, seed, a.size)?;
    let manifest = out.join(MANIFEST);
    let entries = data::ingest_corpus(&images, &masks, Some(&manifest))?;
    println!("{} portraits -> {}", entries.len(), manifest.display());
    Ok(())
}
