use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sosiq_core::features::FeatureKind;
use sosiq_core::similarity::SimilarityFn;

#[derive(Debug, Parser)]
#[command(name = "sosiq", version, about = "Blind image quality from statistics of self-similarity")]
pub struct Cli {
    /// Worker threads for extraction and splits (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write SOS feature vectors of images to CSV.
    Extract(ExtractArgs),
    /// Fit a quality model on a manifest.
    Train(TrainArgs),
    /// Print predicted quality for images.
    Predict(PredictArgs),
    /// Within-database benchmark over reference-disjoint splits.
    Benchmark(BenchmarkArgs),
    /// Train on one manifest, evaluate on another.
    Crossdb(CrossdbArgs),
    /// Generate a distorted corpus from pristine images.
    Distort(DistortArgs),
    /// Write procedural pristine images.
    Synth(SynthArgs),
    /// Re-run the command recorded in a config.txt.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// Similarity function: ssim, rnse or mse.
    #[arg(long = "fn", default_value = "rnse")]
    pub function: SimilarityFn,

    /// Feature kind: md (mean/deviation) or h (histogram).
    #[arg(long, default_value = "h")]
    pub features: FeatureKind,

    /// Side of the rNSE counting window (odd).
    #[arg(long, default_value_t = sosiq_core::similarity::DEFAULT_RNSE_WINDOW)]
    pub rnse_window: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    /// log2(C) grid as START:END:STEP.
    #[arg(long, default_value = "-1:9:2", allow_hyphen_values = true)]
    pub log2c: String,

    /// log2(gamma) grid as START:END:STEP.
    #[arg(long, default_value = "-11:1:2", allow_hyphen_values = true)]
    pub log2g: String,

    /// Cross-validation folds for the grid search.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    /// Tube half-width on targets scaled to [0, 1].
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,

    /// SMO stopping tolerance.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,

    /// SMO iteration cap.
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub method: MethodArgs,

    /// Manifest whose images are extracted (in addition to positional images).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,

    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub method: MethodArgs,

    #[command(flatten)]
    pub training: TrainingArgs,

    /// Manifest CSV of training images and scores.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Seed for cross-validation folds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub method: MethodArgs,

    #[command(flatten)]
    pub training: TrainingArgs,

    /// Manifest CSV of the database.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Seed for splits and cross-validation folds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Number of random train/test splits.
    #[arg(long, default_value_t = 1000)]
    pub repeats: usize,

    /// Fraction of reference images used for training.
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,

    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossdbArgs {
    #[command(flatten)]
    pub method: MethodArgs,

    #[command(flatten)]
    pub training: TrainingArgs,

    /// Manifest to train on.
    #[arg(long)]
    pub train: PathBuf,

    /// Manifest to evaluate on.
    #[arg(long)]
    pub test: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistortArgs {
    /// Directory of pristine PNG/BMP images.
    #[arg(long)]
    pub pristine: PathBuf,

    /// Comma-separated families (default: all).
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<String>,

    /// Custom strengths, FAMILY=S1,S2,... (repeatable).
    #[arg(long = "level")]
    pub levels: Vec<String>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub count: usize,

    /// Side length in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub config: PathBuf,
}
