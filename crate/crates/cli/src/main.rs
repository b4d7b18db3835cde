use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qednet::indices::SpectralIndex;
use qednet::model::Variant;

mod commands;

/// Dual-branch CNN + quantum neural network mangrove mapper.
#[derive(Parser, Debug)]
#[command(name = "qednet", version, about)]
struct Cli {
    /// Worker threads (default: available parallelism). QEDNET_WORKERS
    /// takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Run a checkpoint on a scene and write the sigmoid and class maps.
    Predict(PredictArgs),
    /// Print OA / AA / kappa against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Compute a spectral index map and optional classification.
    Index(IndexArgs),
    /// Generate a synthetic scene and its mask.
    Synth(SynthArgs),
    /// Train all three variants and print the ablation table.
    Ablation(TrainArgs),
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Directory of `.mqr` scenes with sibling `.mqm` masks.
    #[arg(long)]
    pub train_dir: PathBuf,
    #[arg(long)]
    pub val_dir: PathBuf,
    /// Checkpoint path (train) or CSV path (ablation).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "cnn_qnn")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub feat_width: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Training patch size; scenes are tiled into size x size patches.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// History CSV path (default: `<out>.history.csv`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output prefix for `<out>.sigmoid.mqr` and `<out>.class.mqm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed threshold instead of the automatic one.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Expected variant; a checkpoint holding another one is rejected.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub feat_width: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Either `pred.mqm gt.mqm`, or one or more `.mqr` scenes whose masks
    /// sit next to them.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate this index (default with no checkpoint: ndvi, mmri, mvi).
    #[arg(long)]
    pub index: Option<SpectralIndex>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value = "metrics.csv")]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub index: SpectralIndex,
    #[arg(long)]
    pub input: PathBuf,
    /// Output prefix for `<out>.index.mqr` and `<out>.class.mqm`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output prefix for `<out>.mqr` and `<out>.mqm`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0.03)]
    pub noise: f64,
}

fn worker_count(flag: Option<usize>) -> Result<usize, String> {
    if let Ok(v) = std::env::var("QEDNET_WORKERS") {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!(
                "QEDNET_WORKERS must be a positive integer, got `{v}`"
            )),
        };
    }
    match flag {
        Some(0) => Err("--workers must be positive".into()),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let workers = match worker_count(cli.workers) {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Index(a) => commands::index(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Ablation(a) => commands::ablation(&a),
        Command::Selftest => commands::selftest(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
