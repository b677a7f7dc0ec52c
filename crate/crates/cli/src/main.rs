//! `fsner` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod ablate;
mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "fsner", version, about = "Few-shot generative entity extraction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic long-tailed corpus.
    GenCorpus(GenCorpusArgs),
    /// Draw a frequency-proportional k-shot subset.
    SampleFewshot(SampleArgs),
    /// Pretrain and freeze the reconstruction validator.
    PretrainValidator(PretrainArgs),
    /// Jointly train the extractor.
    Train(TrainArgs),
    /// Parse linearized model output into entity lists.
    Parse(ParseArgs),
    /// Score predictions against gold.
    Evaluate(EvaluateArgs),
    /// Run the Base / +Valid / +Valid+CL grid over k and seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 10)]
    pub types: usize,
    #[arg(long, default_value_t = 1.0)]
    pub exponent: f64,
    #[arg(long, default_value_t = 200)]
    pub sentences: usize,
    #[arg(long, default_value_t = 3.1)]
    pub mean_entities: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus JSONL to write; the spec and tally go to `<out>.spec.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sampling report JSON; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out corpus for model selection; the training set when absent.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Flat TOML training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation corpus; the training set when absent.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Frozen validator checkpoint; pretrained on `--train` when absent.
    #[arg(long)]
    pub validator: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Ontology JSON, or a corpus JSONL whose types are used.
    #[arg(long)]
    pub ontology: PathBuf,
    /// One generation per line: `{"id": .., "output": ..}` or raw text.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Gold corpus JSONL.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predictions JSONL with `id` and `entities`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Training ontology JSON or training corpus JSONL.
    #[arg(long)]
    pub train_ontology: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Pool to draw few-shot training sets from.
    #[arg(long)]
    pub train: PathBuf,
    /// Evaluation corpus.
    #[arg(long)]
    pub test: PathBuf,
    /// Model-selection corpus; each cell's few-shot set when absent.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [6, 9, 12, 15, 18])]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(&a),
        Command::SampleFewshot(a) => commands::sample_fewshot(&a),
        Command::PretrainValidator(a) => commands::pretrain_validator(&a),
        Command::Train(a) => commands::train(&a),
        Command::Parse(a) => commands::parse(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => ablate::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
