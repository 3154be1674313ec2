//! Command-line front end and HTTP service for `hairgan`.
//!
//! [`dispatch`] parses an argument vector and runs one subcommand. Exit
//! codes: [`EXIT_OK`] on success, [`EXIT_USAGE`] for bad arguments and
//! [`EXIT_RUNTIME`] when the command itself fails.

mod commands;
pub mod plot;
pub mod service;

use std::ffi::OsString;
use std::fmt::Display;
use std::path::PathBuf;

pub use commands::train_config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hairgan::bench::DEFAULT_BENCH_IMAGES;
use hairgan::data::DEFAULT_TRAIN_FRACTION;
use hairgan::metrics::DEFAULT_EVAL_PAIRS;
use hairgan::train::TrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn with_default(text: &str, value: impl Display) -> String {
    format!("{text} [default: {value}]")
}

fn train_default<T: Display>(text: &str, pick: impl Fn(&TrainConfig) -> T) -> String {
    with_default(text, pick(&TrainConfig::default()))
}

#[derive(Debug, Parser)]
#[command(name = "hairgan", version, about = "Mask-conditioned hair synthesis", arg_required_else_help = true)]
pub struct Cli {
    /// Seed for every random choice the command makes. Each command falls
    /// back to its own documented default when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Root directory for everything the command writes.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair images with masks and write `manifest.jsonl`.
    Prepare(PrepareArgs),
    /// Seeded train/test split of a manifest, written as `split.json`.
    Split(SplitArgs),
    /// Train a fresh model.
    Train(TrainArgs),
    /// Continue training from a full checkpoint.
    Resume(ResumeArgs),
    /// Reconstruct, transfer or edit with a trained model.
    #[command(subcommand)]
    Task(TaskCommand),
    /// Score reconstruction or transfer on held-out records.
    Eval(EvalArgs),
    /// Images-per-second throughput of the read/synthesize/write loop.
    Bench(BenchArgs),
    /// Serve the tasks over HTTP.
    Serve(ServeArgs),
    /// Strip a training checkpoint down to generator and encoder weights.
    ExportWeights(ExportArgs),
    /// Plot loss curves from a training log as SVG.
    Plot(PlotArgs),
    /// Write a procedural portrait corpus with hair masks.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of RGB face images (png, jpg).
    #[arg(long)]
    pub images: PathBuf,
    /// Directory of hair masks named like the images.
    #[arg(long)]
    pub masks: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// `manifest.jsonl` written by `prepare` or `synth`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION, help = "Fraction of records assigned to training")]
    pub train_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Perceptual {
    /// VGG19 taps loaded from `--vgg-weights`.
    Vgg,
    /// Identity stub: perceptual loss equals pixel loss. For offline tests.
    Identity,
}

/// Where the records come from: a manifest, optionally narrowed by a split.
#[derive(Debug, Args)]
pub struct RecordArgs {
    /// `manifest.jsonl` written by `prepare` or `synth`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file from `split`; selects `--subset` of the manifest.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractorArgs {
    /// Feature extractor behind the perceptual loss.
    #[arg(long, value_enum, default_value_t = Perceptual::Vgg)]
    pub perceptual: Perceptual,
    /// VGG19 feature weights in safetensors form.
    #[arg(long, default_value = "weights/vgg19.safetensors")]
    pub vgg_weights: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long, help = train_default("Adam learning rate", |c| c.lr))]
    pub lr: Option<f64>,
    #[arg(long, help = train_default("Adam first-moment decay", |c| c.beta1))]
    pub beta1: Option<f64>,
    #[arg(long, help = train_default("Adam second-moment decay", |c| c.beta2))]
    pub beta2: Option<f64>,
    #[arg(long, help = train_default("Passes over the training set", |c| c.epochs))]
    pub epochs: Option<usize>,
    #[arg(long, help = train_default("Images per step", |c| c.batch_size))]
    pub batch_size: Option<usize>,
    #[arg(long, help = train_default("Pixel loss weight", |c| c.weights.lambda_pixel))]
    pub lambda_pixel: Option<f64>,
    #[arg(long, help = train_default("Style loss weight", |c| c.weights.lambda_style))]
    pub lambda_style: Option<f64>,
    #[arg(long, help = train_default("Perceptual loss weight", |c| c.weights.lambda_perceptual))]
    pub lambda_perceptual: Option<f64>,
    #[arg(long, help = train_default("Adversarial loss weight", |c| c.weights.lambda_adversarial))]
    pub lambda_adversarial: Option<f64>,
    #[arg(long, help = train_default("Checkpoint every this many epochs", |c| c.checkpoint_every))]
    pub checkpoint_every: Option<usize>,
    #[arg(long, help = train_default("Log losses every this many steps", |c| c.log_every))]
    pub log_every: Option<usize>,
    #[arg(long, help = "Global gradient-norm clip per update group [default: off]")]
    pub grad_clip: Option<f64>,
    #[arg(long, help = "Stop after this many steps [default: run all epochs]")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub records: RecordArgs,
    /// Which side of `--split` to train on.
    #[arg(long, value_enum, default_value_t = Subset::Train)]
    pub subset: Subset,
    /// Training config (TOML, or JSON by extension); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Architecture config (TOML) [default: 64 base channels, 5 stages].
    #[arg(long, conflicts_with = "miniature")]
    pub model_config: Option<PathBuf>,
    /// Use the 4-base-channel miniature architecture.
    #[arg(long)]
    pub miniature: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    /// Full training checkpoint (optimizer state included).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub records: RecordArgs,
    /// Which side of `--split` to train on.
    #[arg(long, value_enum, default_value_t = Subset::Train)]
    pub subset: Subset,
    #[arg(long, help = "Total epochs [default: as stored in the checkpoint]")]
    pub epochs: Option<usize>,
    #[arg(long, help = "Total step limit [default: as stored in the checkpoint]")]
    pub max_steps: Option<usize>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint or exported weights.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest the record ids refer to.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum TaskCommand {
    /// Regenerate a record's own hair.
    Reconstruct {
        #[command(flatten)]
        model: ModelArgs,
        /// Source record id.
        #[arg(long)]
        source: String,
    },
    /// Render a reference record's hair style on the source.
    Transfer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        source: String,
        #[arg(long)]
        reference: String,
    },
    /// Synthesize hair under an edited mask.
    Edit {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        source: String,
        /// Style reference; the source's own hair when omitted.
        #[arg(long)]
        reference: Option<String>,
        /// 8-bit gray PNG, binarized at one half.
        #[arg(long)]
        mask: PathBuf,
    },
    /// Run a JSON list of requests, one PNG each.
    Batch {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        requests: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalTaskArg {
    #[value(alias = "reconstruct")]
    Reconstruction,
    Transfer,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub records: RecordArgs,
    /// Which side of `--split` to score.
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub subset: Subset,
    /// Model checkpoint; required unless `--identity`.
    #[arg(long, required_unless_present = "identity")]
    pub checkpoint: Option<PathBuf>,
    /// Score the identity model (returns each source unchanged).
    #[arg(long, conflicts_with = "checkpoint")]
    pub identity: bool,
    /// Pairing scheme: each record with itself, or with another record.
    #[arg(long, value_enum)]
    pub task: EvalTaskArg,
    #[arg(long, default_value_t = DEFAULT_EVAL_PAIRS, help = "Number of seeded pairs")]
    pub pairs: usize,
    /// Inception weights for FID; FID is skipped when neither this nor
    /// `--pixel-fid` is given.
    #[arg(long)]
    pub inception_weights: Option<PathBuf>,
    /// FID over 8×8 pooled pixels instead of Inception features.
    #[arg(long, conflicts_with = "inception_weights")]
    pub pixel_fid: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Inputs to cycle through; images are read from disk on every pass.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model checkpoint [default: freshly initialized default architecture].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BENCH_IMAGES, help = "Images to process")]
    pub images: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint or exported weights, loaded after the listener is up.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Concurrent inference lanes.
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Full training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output file name, relative to `--out-dir`.
    #[arg(long, default_value = "weights.safetensors")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `loss_log.jsonl` written by training.
    #[arg(long)]
    pub log: PathBuf,
    /// Output file name, relative to `--out-dir`.
    #[arg(long, default_value = "losses.svg")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of portraits.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Side length of the written images.
    #[arg(long, default_value_t = 128)]
    pub size: u32,
}

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
