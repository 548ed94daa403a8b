//! `asft`: the end-to-end pipeline on the toy VAE. Train a model, extract
//! an active subspace of its decoder, fit a posterior over subspace
//! coordinates, fine-tune against a design-set objective, and aggregate.
//!
//! Exit codes: 0 on success, 2 for usage or configuration problems, 3 for
//! numeric failures.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{DeltaKl, FileConfig, Method, SeedList};
use crate::error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};
use asft_core::finetune::Acquisition;
use asft_core::toygen::Property;

#[derive(Debug, Parser)]
#[command(name = "asft", version, about = "Active-subspace fine-tuning of a toy sequence VAE")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy VAE and write model.asft, corpus.txt and train_loss.csv.
    Train(TrainArgs),
    /// Build the active subspace of the decoder block.
    Subspace(SubspaceArgs),
    /// Fit the Gaussian posterior over subspace coordinates.
    Posterior(PosteriorArgs),
    /// Fine-tune the subspace distribution against a design set.
    Finetune(FinetuneArgs),
    /// Score fine-tuned distributions on fresh design sets.
    CrossEval(CrossEvalArgs),
    /// Similarity grids between subspaces and a random baseline.
    Similarity(SimilarityArgs),
    /// Aggregate fine-tuning trials into summary tables and plot data.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SubspaceArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training corpus; defaults to corpus.txt next to the model.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Subspace dimension k.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of gradient samples n.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub subspace_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vi_seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub prior_stddev: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub init_stddev: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub posterior: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long, value_parser = parse_property)]
    pub property: Option<Property>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_parser = parse_acquisition)]
    pub acquisition: Option<Acquisition>,
    /// `auto` or a positive threshold.
    #[arg(long)]
    pub delta_kl: Option<DeltaKl>,
    #[arg(long)]
    pub delta_fraction: Option<f64>,
    /// Design-set seeds, e.g. `0..9` or `1,4,7`.
    #[arg(long)]
    pub q_seed: Option<SeedList>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub opt_seed: Option<u64>,
    #[arg(long)]
    pub design_points: Option<usize>,
    #[arg(long)]
    pub models: Option<usize>,
    /// Use the closed-form KL as a hard constraint instead of a surrogate.
    #[arg(long)]
    pub exact_constraint: bool,
    /// Keep elapsed milliseconds in the trace files.
    #[arg(long)]
    pub wall_time: bool,
}

#[derive(Debug, Args)]
pub struct CrossEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub posterior: PathBuf,
    /// Directory holding best_*.json files from `finetune`.
    #[arg(long)]
    pub dists: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub design_seeds: Option<SeedList>,
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// Add the point mass at the subspace origin as a control.
    #[arg(long)]
    pub control: bool,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// Pairs of random subspaces for the baseline grid (0 disables it).
    #[arg(long)]
    pub random_pairs: Option<usize>,
    #[arg(long)]
    pub random_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding trial_*.json files from `finetune`.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_property(s: &str) -> Result<Property, String> {
    s.parse().map_err(|e: asft_core::error::CoreError| e.to_string())
}

fn parse_acquisition(s: &str) -> Result<Acquisition, String> {
    s.parse().map_err(|e: asft_core::error::CoreError| e.to_string())
}

/// Sizes the global worker pool from `ASFT_THREADS` (unset or 0 = automatic).
fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ASFT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("ASFT_THREADS must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        // a pool may already exist when called in-process more than once
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: &Cli, argv: &[String]) -> CliResult<()> {
    configure_threads()?;
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Train(a) => commands::train::run(&cfg, a, argv),
        Command::Subspace(a) => commands::subspace::run(&cfg, a, argv),
        Command::Posterior(a) => commands::posterior::run(&cfg, a, argv),
        Command::Finetune(a) => commands::finetune::run(&cfg, a, argv),
        Command::CrossEval(a) => commands::cross_eval::run(&cfg, a, argv),
        Command::Similarity(a) => commands::similarity::run(&cfg, a, argv),
        Command::Report(a) => commands::report::run(a, argv),
    }
}

/// Parses `args` (program name first) and runs the command, printing any
/// error to stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("asft: {e}");
            e.code
        }
    }
}
