use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod infer;
mod synth;
mod train;
mod util;

/// Multi-person pose forecasting: data synthesis, training, evaluation and
/// prediction.
///
/// Every run prints its fully resolved configuration to stderr. Values
/// resolve as: command-line flag, then config file, then the SOMOFORMER_SEED
/// environment variable (seed only), then built-in defaults.
#[derive(Parser)]
#[command(name = "somoformer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate single-person walking scenes to mix into datasets.
    SynthSources(SynthSourcesArgs),
    /// Mix single-person source scenes into multi-person scenes.
    SynthData(SynthDataArgs),
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train(TrainArgs),
    /// Score a checkpoint or a baseline on a dataset.
    Eval(EvalArgs),
    /// Forecast the future of every person in a scene.
    Predict(PredictArgs),
    /// Write the attention of one forward pass as JSON.
    ExportAttention(PredictArgs),
}

#[derive(Args)]
struct SynthSourcesArgs {
    /// Number of scenes to generate.
    #[arg(long, default_value_t = 40)]
    num: usize,
    #[arg(long, default_value_t = 150)]
    frames: usize,
    #[arg(long, default_value_t = 15.0)]
    fps: f64,
    /// Comma-separated joint names to keep, root included (default: all 13).
    #[arg(long, value_delimiter = ',')]
    joints: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthDataArgs {
    /// Directory of single-person scenes.
    #[arg(long)]
    sources: PathBuf,
    #[arg(long, default_value_t = 3)]
    num_persons: usize,
    /// Number of scenes to write.
    #[arg(long)]
    windows: usize,
    /// Observed frames per scene.
    #[arg(long = "history-len", visible_alias = "t", default_value_t = 15)]
    history_len: usize,
    /// Future frames per scene.
    #[arg(long = "future-len", visible_alias = "T", default_value_t = 45)]
    future_len: usize,
    /// Side of the square, in metres, in which persons are placed.
    #[arg(long, default_value_t = 4.0)]
    extent: f64,
    /// Keep each source's heading instead of turning it randomly.
    #[arg(long)]
    no_rotate: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of training scenes.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training log; defaults to the checkpoint path with `.log.jsonl` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Model preset: tiny, small, desk or full.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    future_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Disable all augmentation.
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop, with a resumable checkpoint, once this many epochs are done.
    #[arg(long)]
    until_epoch: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    ZeroVelocity,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("predictor").required(true).args(["ckpt", "baseline"]))]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    data: PathBuf,
    /// somof (16 → 14 frames, VIM) or cmu (15 → 45 frames, MPJPE).
    #[arg(long, default_value = "somof")]
    protocol: String,
    /// Comma-separated metrics; defaults to the protocol's own.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the reports as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// First observed frame within the scene.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthSources(a) => synth::sources(a),
        Command::SynthData(a) => synth::data(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => infer::eval(a),
        Command::Predict(a) => infer::predict(a),
        Command::ExportAttention(a) => infer::export_attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
