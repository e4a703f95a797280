//! Batch commands behind the `nlu` binary.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{DataDir, TrainOutput};
pub use manifest::{fingerprint, Fingerprint, RunManifest, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nlu_core::Error),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// 2 for bad input, 3 for a diverged run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(nlu_core::Error::Divergence { .. }) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nlu", version, about = "Joint intent detection and slot filling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a data directory (train.txt, dev.txt, optional test.txt
    /// and annotation resources).
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Relative error reduction of report A over report B.
    Compare(CompareArgs),
    /// Dump intent pooling weights for one utterance.
    Attn(AttnArgs),
    /// Print the case and entity class of every word.
    Annotate(AnnotateArgs),
    /// Write a toy-grammar data directory.
    Toy(ToyArgs),
    /// Corpus statistics of a data directory.
    Stats(StatsArgs),
    /// Report I- tags that do not continue a chunk.
    Lint(LintArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SlotModeArg {
    Softmax,
    Crf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntentPoolArg {
    Attention,
    StartToken,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// key=value training configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train this many runs with consecutive seeds and pick the best on dev.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, value_enum)]
    pub slot_mode: Option<SlotModeArg>,
    #[arg(long)]
    pub no_slot_features: bool,
    #[arg(long, value_enum)]
    pub intent_pool: Option<IntentPoolArg>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Kv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Score the gold annotations against themselves; no checkpoint needed.
    #[arg(long)]
    pub self_test: bool,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Kv)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    pub report_a: PathBuf,
    pub report_b: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttnFormat {
    Tsv,
    Svg,
}

#[derive(Debug, Clone, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Whitespace-tokenized utterance.
    #[arg(long)]
    pub text: String,
    #[arg(long, value_enum, default_value_t = AttnFormat::Tsv)]
    pub format: AttnFormat,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long)]
    pub text: String,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 300)]
    pub dev: usize,
    #[arg(long, default_value_t = 300)]
    pub test: usize,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LintArgs {
    pub corpus: PathBuf,
}

/// Runs one command, returning what it prints on standard output.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Train(a) => commands::train(&a).map(|o| o.summary_text),
        Command::Eval(a) => commands::eval(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Attn(a) => commands::attn(&a),
        Command::Annotate(a) => commands::annotate(&a),
        Command::Toy(a) => commands::toy(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Lint(a) => commands::lint(&a),
    }
}
