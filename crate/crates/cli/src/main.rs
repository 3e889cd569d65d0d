//! `res`: simulate scenarios, train the suppressor, enhance recordings,
//! evaluate and report the compute budget.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "res", version, about = "Residual echo suppression pipeline")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the loss alpha (echo suppression vs distortion trade-off).
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario corpus with equal thirds of far-end, near-end and double talk.
    Simulate(SimulateArgs),
    /// Train the suppressor on a scenario corpus.
    Train(TrainArgs),
    /// Enhance one recording or every utterance of a corpus.
    Infer(InferArgs),
    /// Segment-aware metrics over a corpus.
    Evaluate(EvaluateArgs),
    /// Parameter count, flops and model size against the reference budget.
    Budget(BudgetArgs),
    /// Print the resolved configuration.
    Config,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of utterances.
    #[arg(short, long)]
    pub n: usize,
    /// Output directory (default: paths.data_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing corpus.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory (default: paths.data_dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output model file (default: paths.model).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// JSON-lines loss log (default: <model>.log.jsonl).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Checkpoint written after every epoch (default: <model>.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Model file (default: paths.model).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Microphone recording.
    #[arg(long, requires_all = ["far", "out"], conflicts_with = "data")]
    pub mic: Option<PathBuf>,
    /// Far-end (loudspeaker) signal.
    #[arg(long)]
    pub far: Option<PathBuf>,
    /// Output WAV for a single recording.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus to enhance; writes <out-dir>/<utterance>.wav.
    #[arg(long, requires = "out_dir")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Keep the linear canceler fixed (step size 0).
    #[arg(long)]
    pub freeze_aec: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Corpus directory (default: paths.data_dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of <utterance>.wav predictions.
    #[arg(long, conflicts_with_all = ["model", "aec_only"])]
    pub predictions: Option<PathBuf>,
    /// Run this model instead of reading predictions.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Score the linear canceler output as the prediction.
    #[arg(long, conflicts_with = "model")]
    pub aec_only: bool,
    /// Report directory (default: paths.report_dir).
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// Also report the size of this model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(commands::EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let globals = Globals { config: cli.config, seed: cli.seed, alpha: cli.alpha };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&globals, a),
        Command::Train(a) => commands::train(&globals, a),
        Command::Infer(a) => commands::infer(&globals, a),
        Command::Evaluate(a) => commands::evaluate(&globals, a),
        Command::Budget(a) => commands::budget(&globals, a),
        Command::Config => commands::print_config(&globals),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
