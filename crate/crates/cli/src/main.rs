//! `nastar`: synthetic data, training, retrieval, adaptation and evaluation.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "nastar", version, about = "One-shot noise adaptation for speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config JSON. Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct Schedule {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Nastar,
    Extr,
    Gt,
    All,
    Retv,
    Opt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Group,
    Utterance,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus, per-family queries and test sets.
    SynthData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        families: Option<usize>,
        #[arg(long)]
        variants: Option<usize>,
        #[arg(long)]
        speech_count: Option<usize>,
        #[arg(long)]
        test_speech_count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the noise extractor and the enhancement model.
    Pretrain {
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        /// Drop noise entries labelled with this family (repeatable).
        #[arg(long)]
        exclude_family: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        schedule: Schedule,
        #[command(flatten)]
        common: Common,
    },
    /// Train the retrieval encoder contrastively.
    TrainRetrieval {
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        schedule: Schedule,
        #[command(flatten)]
        common: Common,
    },
    /// Embed every noise of a manifest into an index file.
    BuildIndex {
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the noise of a noisy utterance.
    ExtractNoise {
        #[arg(long)]
        extractor: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Retrieve the k index entries closest to a query.
    Retrieve {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Defaults to encoder.ckpt next to the index.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a pretrained enhancement model to the query's condition.
    Adapt {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        se: PathBuf,
        #[arg(long)]
        extractor: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Noise manifest the index was built from.
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// True query noise for `gt`, held-out target noise for `opt`.
        #[arg(long)]
        reference_noise: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        schedule: Schedule,
        #[command(flatten)]
        common: Common,
    },
    /// Score a model (or the unprocessed input) on a test set.
    Evaluate {
        #[arg(long)]
        testset: PathBuf,
        #[arg(long, required_unless_present = "noisy", conflicts_with = "noisy")]
        model: Option<PathBuf>,
        /// Score the noisy input itself.
        #[arg(long)]
        noisy: bool,
        /// Run name used by `report`. Defaults to the output directory name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare evaluation runs.
    Report {
        /// Comma-separated evaluation output directories.
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        /// Name of the unprocessed baseline run, for improvement rates.
        #[arg(long = "noisy-run")]
        noisy: Option<String>,
        /// Name of the pretrained baseline run, for improvement rates.
        #[arg(long = "ptn-run")]
        ptn: Option<String>,
        #[arg(long)]
        ttest: bool,
        /// Reference run of the t-tests. Defaults to the PTN run, else the first.
        #[arg(long)]
        ttest_against: Option<String>,
        #[arg(long, value_enum, default_value = "group")]
        level: Level,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
