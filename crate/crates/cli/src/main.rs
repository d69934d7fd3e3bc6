//! `dfl`: extraction, head training, evaluation, benchmarks and prediction.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dfl_core::embedstore::NormalizationMode;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dfl", version, about = "Deep feature learning on frozen backbone embeddings")]
pub struct Cli {
    /// Seed for head training; overrides seeds from config and spec files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Extraction worker threads when a command's own --workers is not given.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed every sample of a manifest into a store.
    Extract(ExtractArgs),
    /// Train a classification head on a store.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a store.
    Eval(EvalArgs),
    /// Rank candidate backbones on a proxy task.
    SelectBackbone(SpecArgs),
    /// Run a view/noise ablation grid.
    Ablate(SpecArgs),
    /// Classify images with a backbone and a trained head.
    Predict(PredictArgs),
    /// Embedding store utilities.
    #[command(subcommand)]
    Store(StoreCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Normalization {
    L2,
    Off,
}

impl From<Normalization> for NormalizationMode {
    fn from(n: Normalization) -> Self {
        match n {
            Normalization::L2 => NormalizationMode::L2,
            Normalization::Off => NormalizationMode::Off,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Backbone sidecar JSON.
    #[arg(long)]
    pub backbone: PathBuf,
    /// Comma-separated view names; all manifest views by default.
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum, default_value = "l2")]
    pub normalization: Normalization,
    #[arg(long, default_value_t = 1.0)]
    pub pad_fill: f32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Head config JSON; zero dimensions are filled from the training store.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log JSON, `<out stem>.log.json` by default.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Report path; `.json` writes JSON, anything else plain text.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Report path; `.json` writes JSON, anything else the rendered table.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub backbone: PathBuf,
    /// Images, one per view for each sample, samples back to back.
    #[arg(long, num_args = 1.., required = true)]
    pub image: Vec<PathBuf>,
    /// Comma-separated views; the checkpoint's views by default.
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<String>,
    /// Manifest whose view definitions to use; RGB resize to the backbone input otherwise.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "l2")]
    pub normalization: Normalization,
    #[arg(long, default_value_t = 1.0)]
    pub pad_fill: f32,
}

#[derive(Debug, Subcommand)]
pub enum StoreCommand {
    /// Print a store's header and provenance.
    Inspect { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_line());
            return ExitCode::from(err.exit_code());
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code())
        }
    }
}
