mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "bandsel", version, about = "LiDAR-guided hyperspectral band selection")]
pub struct Cli {
    /// Overrides the seed in every config the command reads.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; 1 gives bit-reproducible runs, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with known informative bands.
    Synth(SynthArgs),
    /// Pearson correlation of every band with each LiDAR channel.
    Correlate(CorrelateArgs),
    /// Train a model on a data directory.
    Train(TrainArgs),
    /// Rank bands with a trained model and keep the top k.
    Select(SelectArgs),
    /// Classify selected bands + LiDAR and report OA / AA / Kappa.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec (TOML).
    pub spec: PathBuf,
    /// Training pixels per class written to split.toml.
    #[arg(long, default_value_t = 40)]
    pub train_per_class: usize,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Cube raster header.
    pub cube: PathBuf,
    /// LiDAR raster header.
    pub lidar: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding cube.toml, lidar.toml, labels.toml and split.toml.
    pub data: PathBuf,
    /// Model config (TOML); data dimensions are filled in when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `cross_attention` or `hsi_only`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, overrides_with = "no_augment")]
    pub augment: bool,
    #[arg(long, overrides_with = "augment")]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Checkpoint directory.
    pub checkpoint: PathBuf,
    /// Data directory.
    pub data: PathBuf,
    /// `cross`, `self-a` or `self-b`.
    #[arg(long, default_value = "cross")]
    pub strategy: String,
    #[arg(long, short)]
    pub k: usize,
    /// Average weights over the 5x augmented training set.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Data directory.
    pub data: PathBuf,
    /// Newline-separated band indices.
    #[arg(long, conflicts_with_all = ["ranking", "all_bands"])]
    pub bands: Option<PathBuf>,
    /// Ranking CSV; evaluated at each of `--counts`.
    #[arg(long, requires = "counts", conflicts_with = "all_bands")]
    pub ranking: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Use every band.
    #[arg(long)]
    pub all_bands: bool,
    /// Classifier config (TOML).
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(cli, a),
        Command::Correlate(a) => commands::correlate(cli, a),
        Command::Train(a) => commands::train(cli, a),
        Command::Select(a) => commands::select(cli, a),
        Command::Eval(a) => commands::eval(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
