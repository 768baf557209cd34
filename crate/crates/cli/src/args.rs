use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cocoa_core::pipeline::{Method, TrainConfig};
use cocoa_core::synth::SynthConfig;

/// Multimodal contrastive pretraining, evaluation and cost benchmarking.
#[derive(Debug, Parser)]
#[command(name = "cocoa", version)]
pub struct Cli {
    /// TOML config with optional `data_dir`, `[synth]` and `[train]` tables; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Log progress to stderr (-v per-epoch, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multimodal dataset.
    Synth(SynthArgs),
    /// Self-supervised pretraining of the modality encoders.
    Pretrain(PretrainArgs),
    /// Linear classifier on frozen encoder embeddings.
    Probe(ProbeArgs),
    /// Joint training of encoders and classifier on a fraction of the labels.
    Finetune(FinetuneArgs),
    /// Fine-tuned macro-F1 as a function of the labeled fraction.
    LabelCurve(LabelCurveArgs),
    /// Pretrain and probe over a grid of methods, batch sizes and seeds.
    BatchSweep(BatchSweepArgs),
    /// Count and time similarity evaluations of the cocoa and cmc objectives.
    Bench(BenchArgs),
    /// Write fused encoder embeddings of a dataset split to CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the manifest and binary files.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub num_modalities: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub windows_per_class: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Strength of view-specific interfering tones, relative to the noise level.
    #[arg(long)]
    pub interference: Option<f64>,
}

impl SynthArgs {
    pub fn apply(&self, c: &mut SynthConfig) {
        set(&mut c.seed, self.seed);
        set(&mut c.num_classes, self.num_classes);
        set(&mut c.num_modalities, self.num_modalities);
        set(&mut c.channels_per_modality, self.channels);
        set(&mut c.window, self.window);
        set(&mut c.windows_per_class, self.windows_per_class);
        set(&mut c.noise_std, self.noise_std);
        set(&mut c.interference, self.interference);
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory or manifest path.
    #[arg(long, env = "COCOA_DATA_DIR", value_name = "PATH")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// cocoa, infonce, dcl, hard_dcl, barlow, cmc or supervised.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of the cocoa discriminator term.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_bt: Option<f64>,
    #[arg(long)]
    pub dcl_eps: Option<f64>,
    #[arg(long)]
    pub hard_beta: Option<f64>,
    /// Seeds the split, initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch metrics as JSON lines.
    #[arg(long, value_name = "FILE")]
    pub metrics: Option<PathBuf>,
}

impl TrainArgs {
    pub fn apply(&self, c: &mut TrainConfig) {
        set(&mut c.method, self.method);
        set(&mut c.batch_size, self.batch);
        set(&mut c.max_epochs, self.epochs);
        set(&mut c.lr, self.lr);
        set(&mut c.early_stop_patience, self.patience);
        set(&mut c.hyper.tau, self.tau);
        set(&mut c.hyper.lambda, self.lambda);
        set(&mut c.hyper.lambda_bt, self.lambda_bt);
        set(&mut c.hyper.dcl_eps, self.dcl_eps);
        set(&mut c.hyper.hard_beta, self.hard_beta);
        set(&mut c.seed, self.seed);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory for `encoder.ckpt` and `run.json`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Encoder checkpoint; randomly initialized encoders when omitted.
    #[arg(long, value_name = "FILE")]
    pub encoder: Option<PathBuf>,
    /// JSON report path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Encoder checkpoint; randomly initialized encoders when omitted.
    #[arg(long, value_name = "FILE")]
    pub encoder: Option<PathBuf>,
    /// Stratified fraction of training labels to use.
    #[arg(long, default_value_t = 1.0)]
    pub label_fraction: f64,
    /// Output directory for `model.ckpt` and `report.json`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelCurveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.25,0.5,1.0")]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// JSON report path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchSweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_value = "cocoa,infonce,dcl,hard_dcl,barlow,cmc")]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
    pub batches: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Grid cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// CSV report path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Modality counts.
    #[arg(long = "V", value_delimiter = ',', default_value = "2,3,4,6")]
    pub views: Vec<usize>,
    /// Batch sizes.
    #[arg(long = "N", value_delimiter = ',', default_value = "8,64,256")]
    pub batches: Vec<usize>,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV report path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub encoder: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::All)]
    pub split: SplitName,
    /// Seeds the train/val/test split.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}
