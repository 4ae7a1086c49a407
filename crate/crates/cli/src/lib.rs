//! The `entrain` command-line pipeline. Each subcommand is a plain function
//! over an argument struct, so tests can drive the pipeline without a
//! subprocess.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use entrain::{Error, Result};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "entrain", version, about = "Stylebook response matching and entrainment analysis")]
pub struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build train/validation/test matching datasets and a BPE vocabulary.
    Prepare(PrepareArgs),
    /// Train a matching model on a prepared dataset.
    Train(TrainArgs),
    /// Recall@1/2/5 of one or more checkpoints on a dataset split.
    Eval(EvalArgs),
    /// Per-dialogue convergence variables from a trained model.
    Entrain(EntrainArgs),
    /// Correlation and stepwise regression against outcome scales.
    Analyze(AnalyzeArgs),
    /// Averaged style embeddings of utterances as TSV.
    ExportStyle(ExportStyleArgs),
    /// Generate a synthetic style-conditioned corpus.
    Synth(SynthArgs),
}

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named defaults: `desk` or `full`.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// Whether anything beyond the built-in defaults was requested.
    pub fn is_explicit(&self) -> bool {
        self.config.is_some() || self.profile.is_some() || !self.set.is_empty()
    }

    /// Resolves the run configuration; `extra` overrides come from
    /// subcommand-specific flags and win over everything else.
    pub fn resolve(&self, extra: &[(&str, String)]) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        overrides.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        RunConfig::resolve(self.config.as_deref(), self.profile.as_deref(), &overrides)
    }
}

#[derive(Clone, Debug, Args)]
pub struct PrepareArgs {
    /// Corpus JSONL, one dialogue per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for the splits, vocabulary and counts report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Train the ablation without the stylebook.
    #[arg(long)]
    pub no_stylebook: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pre-trained word vectors, one token and its values per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `prepare`.
    #[arg(long, required_unless_present = "examples")]
    pub data: Option<PathBuf>,
    /// Split inside `--data` to evaluate.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Candidate-group JSONL file to evaluate instead of a split.
    #[arg(long, conflicts_with = "data")]
    pub examples: Option<PathBuf>,
    /// Checkpoint to evaluate; repeat to compare models side by side.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Metrics CSV (printed as a table either way).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Clone, Debug, Args)]
pub struct EntrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Convergence CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Split dialogues by turn count instead of timestamps.
    #[arg(long)]
    pub by_turns: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Clone, Debug, Args)]
pub struct AnalyzeArgs {
    /// Convergence CSV written by `entrain`.
    #[arg(long)]
    pub convergence: PathBuf,
    /// Outcome scales: `dialogue_id` plus one column per DV.
    #[arg(long)]
    pub outcomes: PathBuf,
    /// Other convergence measures to correlate against.
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Output directory for the reports.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Clone, Debug, Args)]
pub struct ExportStyleArgs {
    /// One utterance per line, optionally `label<TAB>text`.
    #[arg(long)]
    pub utterances: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 3)]
    pub speakers: usize,
    #[arg(long, default_value_t = 40)]
    pub turns: usize,
    #[arg(long, default_value_t = 8)]
    pub styles: usize,
    #[arg(long, default_value_t = 0.5)]
    pub strength: f64,
    /// Speakers start with different echo rates and converge over time.
    #[arg(long)]
    pub converging: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Process exit status for an error: 2 for invalid input, 3 for numerical
/// failure, 4 for a configuration mismatch.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::Singular(_) => 3,
        Error::ConfigMismatch(_) => 4,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Prepare(a) => commands::prepare(&a).map(|_| ()),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Eval(a) => commands::eval(&a).map(|_| ()),
        Command::Entrain(a) => commands::entrain(&a).map(|_| ()),
        Command::Analyze(a) => commands::analyze(&a).map(|_| ()),
        Command::ExportStyle(a) => commands::export_style(&a).map(|_| ()),
        Command::Synth(a) => commands::synth(&a).map(|_| ()),
    }
}
