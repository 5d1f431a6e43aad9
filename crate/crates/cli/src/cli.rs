use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use earnet::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "earnet", version, about = "Train, evaluate, rank, explain and serve Best-EarNet otoscopy classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, env = "EARNET_SEED")]
    pub seed: Option<u64>,
    /// JSON file with `model`, `train`, `bench` and `serve` sections.
    #[arg(long, global = true, env = "EARNET_CONFIG")]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true, env = "EARNET_JSON", value_parser = clap::builder::FalseyValueParser::new())]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    BestEarnet,
    Shufflenet,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::BestEarnet => ModelKind::BestEarNet,
            KindArg::Shufflenet => ModelKind::ShuffleNetV2,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic otoscopy-like dataset.
    GenData(GenDataArgs),
    /// Cross-validated training.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Measure batch-1 throughput.
    Bench(BenchArgs),
    /// Overall ranking score over per-fold metric CSVs.
    Rank(RankArgs),
    /// Classify one image.
    Infer(InferArgs),
    /// Write a Grad-CAM heatmap and overlay for one image.
    Gradcam(GradcamArgs),
    /// Run the local HTTP/WebSocket inference service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, env = "EARNET_DATA")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub per_class: usize,
    #[arg(long, default_value_t = 9)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "EARNET_DATA")]
    pub data: PathBuf,
    /// Run directory for manifests, curves, checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::BestEarnet)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Train only the first fold of the split.
    #[arg(long)]
    pub single_split: bool,
    /// Full-size network, 224px input, 100 epochs of batch 128.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "EARNET_WEIGHTS")]
    pub weights: PathBuf,
    #[arg(long, env = "EARNET_DATA")]
    pub data: PathBuf,
    /// Also write per-class metrics in the ranking CSV schema.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = KindArg::BestEarnet)]
    pub kind: KindArg,
    /// Benchmark a trained checkpoint instead of a fresh network.
    #[arg(long, env = "EARNET_WEIGHTS")]
    pub weights: Option<PathBuf>,
    /// Width 0.25 at 64px instead of the full-size network.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub heatmap: bool,
    /// Write `<stem>.json` and `<stem>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Metric CSVs (model,fold,class,recall,precision,specificity,f1 plus FPS rows).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Six non-negative weights: recall,f1,precision,specificity,accuracy,fps.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, env = "EARNET_WEIGHTS")]
    pub weights: PathBuf,
    pub image: PathBuf,
    #[arg(long)]
    pub heatmap: bool,
    #[arg(long)]
    pub sharpness_gate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long, env = "EARNET_WEIGHTS")]
    pub weights: PathBuf,
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Class name or index; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long, default_value = "fusion")]
    pub layer: String,
    #[arg(long, default_value_t = 0.45)]
    pub alpha: f32,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "EARNET_WEIGHTS")]
    pub weights: PathBuf,
    #[arg(long, env = "EARNET_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "EARNET_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "EARNET_LOG_DIR", default_value = "sessions")]
    pub log_dir: PathBuf,
    /// Compute heatmaps unless a request opts out.
    #[arg(long, env = "EARNET_HEATMAP", value_parser = clap::builder::FalseyValueParser::new())]
    pub heatmap: bool,
    #[arg(long, env = "EARNET_SHARPNESS_GATE")]
    pub sharpness_gate: Option<f64>,
    /// Concurrent inference jobs.
    #[arg(long, env = "EARNET_WORKERS", default_value_t = 2)]
    pub workers: usize,
}
