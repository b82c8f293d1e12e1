//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "relup", version, about = "Graph classification with batch-level relation encoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train with 10-fold cross-validation and report mean±std test accuracy
    Train(TrainArgs),
    /// Grid search over alpha, beta, and temperature on a fixed fold plan
    Sweep(SweepArgs),
    /// Loss-term ablation arms A1/A2/A3/Full on identical folds and seeds
    Ablate(AblateArgs),
    /// Wall-clock comparison against the plain backbone
    Bench(BenchArgs),
    /// Export inference-path embeddings from a trained checkpoint
    ExportEmbeddings(ExportArgs),
    /// Parse a dataset and print its statistics
    ParseCheck(ParseArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonOpts {
    /// TUDataset name under the data root (e.g. MUTAG)
    #[arg(long)]
    pub dataset: Option<String>,

    /// Directory holding TUDataset folders
    #[arg(long, default_value = "data")]
    pub data_root: PathBuf,

    /// Use a generated cycles-vs-paths corpus of this size instead of disk data
    #[arg(long)]
    pub synthetic: Option<usize>,

    /// Fraction of labels to flip on the synthetic corpus
    #[arg(long)]
    pub label_noise: Option<f64>,

    /// Node featurization: label | attributes | degree | uniform
    #[arg(long)]
    pub featurize: Option<String>,

    /// Flat key=value config file (flags take precedence)
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Message-passing backbone: gcn | gin | sage
    #[arg(long)]
    pub backbone: Option<String>,

    /// Enable or disable the relation encoder and feedback losses
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub relating_up: Option<bool>,

    /// Weight between the classification and distillation terms
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Weight of the hint term
    #[arg(long)]
    pub beta: Option<f64>,

    /// Distillation temperature
    #[arg(long)]
    pub temperature: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker count for running folds concurrently
    #[arg(long, default_value_t = 1)]
    pub folds_parallel: usize,

    /// Output directory for CSV/summary/checkpoint files
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub hidden: Option<usize>,

    #[arg(long)]
    pub layers: Option<usize>,

    #[arg(long)]
    pub heads: Option<usize>,

    #[arg(long)]
    pub relation_layers: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub max_epochs: Option<usize>,

    #[arg(long)]
    pub patience: Option<usize>,

    #[arg(long)]
    pub dropout: Option<f64>,

    /// Number of cross-validation folds
    #[arg(long)]
    pub folds: Option<usize>,

    /// Stratify the folds by class (on by default)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stratify: Option<bool>,

    /// Readout: sum | mean | max
    #[arg(long)]
    pub readout: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    /// Number of base seeds to aggregate over
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    /// Epochs to measure (the reported figure is the median)
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    /// Checkpoint produced by `train --out`
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[command(flatten)]
    pub common: CommonOpts,
}
