mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slr_core::arch::Architecture;

/// Sign-language clip classification: synthesize data, train, evaluate,
/// predict and grade.
#[derive(Debug, Parser)]
#[command(name = "slr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic moving-blob corpus.
    Synth(SynthArgs),
    /// Train a model on a clip directory and save it.
    Train(TrainArgs),
    /// Evaluate a saved model on the held-out split of a clip directory.
    Evaluate(EvaluateArgs),
    /// Print the most likely labels for one clip.
    Predict(PredictArgs),
    /// Print the predicted sign, its grade and band for one clip.
    Grade(GradeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=8))]
    classes: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    clips_per_class: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 35, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    /// Frame size as HEIGHTxWIDTH.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    #[value(name = "cnn_lstm")]
    CnnLstm,
    #[value(name = "cnn3d")]
    Cnn3d,
    #[value(name = "cnn_rnn_lstm")]
    CnnRnnLstm,
    #[value(name = "cnn_td")]
    CnnTd,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::CnnLstm => Architecture::CnnLstm,
            ArchArg::Cnn3d => Architecture::Cnn3d,
            ArchArg::CnnRnnLstm => Architecture::CnnRnnLstm,
            ArchArg::CnnTd => Architecture::CnnTd,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    arch: ArchArg,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    /// Epochs that always run before early stopping may trigger; capped at --epochs.
    #[arg(long, default_value_t = 15)]
    min_epochs: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    patience: u64,
    /// Share of the training split held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_split: f64,
    /// Share of each class used for training; the rest is the evaluation split.
    #[arg(long, default_value_t = slr_core::data::DEFAULT_SPLIT_RATIO)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write per-epoch metrics as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = slr_core::data::DEFAULT_SEQUENCE_LENGTH, value_parser = parse_positive)]
    frames: usize,
    /// Network input size as HEIGHTxWIDTH.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// 1 for grayscale, 3 for color.
    #[arg(long, default_value_t = 1, value_parser = parse_channels)]
    channels: usize,
    /// Train the convolutional feature extractor of cnn_rnn_lstm instead of freezing it.
    #[arg(long)]
    unfreeze_features: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
    All,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Split seed; must match the one used for training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = slr_core::data::DEFAULT_SPLIT_RATIO)]
    split: f64,
    /// Which clips to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
    on: SplitArg,
    /// Write the classification report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the confusion matrix as CSV.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of frames.
    #[arg(long)]
    clip: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = parse_positive)]
    top: usize,
}

#[derive(Debug, Args)]
struct GradeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    clip: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    Ok((parse_positive(h)?, parse_positive(w)?))
}

fn parse_channels(s: &str) -> Result<usize, String> {
    match s.trim() {
        "1" => Ok(1),
        "3" => Ok(3),
        _ => Err(format!("channels must be 1 or 3, got `{s}`")),
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Grade(a) => commands::grade(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
