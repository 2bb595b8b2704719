//! `setrec` command-line pipeline: ingest or synthesize a corpus, pre-learn
//! the diversity kernel, train, evaluate.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use setrec::eval::{Holdout, IldDistance};
use setrec::train::ObjectiveKind;

pub use config::RunConfig;

const CONFIG_HELP: &str = "\
CONFIGURATION
  Every command accepts --config FILE, a TOML file with these sections
  (all keys optional, defaults shown by any run_config.*.toml):

    seed = 0                      master seed (kernel and training seeds follow it)
    [paths]   input, dataset, factor, checkpoint
    [ingest]  min_sets, max_set_size
    [synth]   n_users, n_items, n_categories, n_days, min_set_size,
              max_set_size, planted_pairs, rho, favored_categories,
              favored_mass, item_concentration, start_time
    [subsets] min_set_size, max_set_size, min_subset_size, max_variants
    [kernel]  rank, reg_delta, lr, epochs, batch_size
    [model]   dim, heads, set_queries, residual
    [train]   lr, beta1, beta2, eps, batch_size, max_epochs, patience,
              a, b, z, lambda, center, objective (\"sdpp\" | \"bce\")
    [eval]    topn, lambda, lambda_sweep, holdout, ild, per_user

  Command-line flags override file values. Each command writes the resolved
  configuration to <out>/run_config.<command>.toml; passing that file back
  with --config reproduces the outputs.

EXIT CODES
  0 success, 2 user or input error, 3 insufficient data, 4 numerical failure";

#[derive(Debug, Parser)]
#[command(name = "setrec", version, about = "Structured-DPP next-set recommendation", after_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read an interaction CSV, sessionize it into daily sets and save the dataset.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with planted co-occurring item pairs.
    Synth(SynthArgs),
    /// Pre-learn the low-rank diversity kernel from observed diverse subsets.
    LearnDiv(LearnDivArgs),
    /// Train the representations on the structured-DPP (or BCE) objective.
    Train(TrainArgs),
    /// Rank every item for each user's held-out set and report metrics.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run directory receiving every output.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Interaction CSV with header `user_id,item_id,category_id,timestamp`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Drop users with fewer daily sets.
    #[arg(long)]
    pub min_sets: Option<usize>,
    /// Keep only the most recent items of larger sets.
    #[arg(long)]
    pub max_set_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Probability that a planted partner joins its member's set.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// Count planted-pair co-occurrence in the output and fail (exit 3) if
    /// any pair falls below rho - 0.1.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct LearnDivArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Rank k of the factor A in K = A·Aᵀ.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Sdpp,
    Bce,
}

impl From<ObjectiveArg> for ObjectiveKind {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Sdpp => ObjectiveKind::Sdpp,
            ObjectiveArg::Bce => ObjectiveKind::Bce,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub factor: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Check analytic gradients by finite differences first; abort if the
    /// worst relative error exceeds 1e-3.
    #[arg(long)]
    pub grad_check: bool,
    /// Exponentiate raw structure weights instead of mean-centered ones.
    #[arg(long)]
    pub no_center: bool,
    /// Resume from `last.ckpt` in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Previous sets per instance (also the context window).
    #[arg(long)]
    pub a: Option<usize>,
    /// Target sets per instance.
    #[arg(long)]
    pub b: Option<usize>,
    /// Negative sets per instance.
    #[arg(long)]
    pub z: Option<usize>,
    /// Preference/cohesion blend; 0 also drops cohesion terms from training.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HoldoutArg {
    Test,
    Validation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IldArg {
    Category,
    Cosine,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Diversity factor, needed only for `--ild cosine`.
    #[arg(long)]
    pub factor: Option<PathBuf>,
    /// Comma-separated cutoffs, e.g. `20,50`.
    #[arg(long)]
    pub topn: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Inclusive grid `start:end:step`, e.g. `0:1:0.1`; one row per value.
    #[arg(long)]
    pub lambda_sweep: Option<String>,
    #[arg(long, value_enum)]
    pub holdout: Option<HoldoutArg>,
    #[arg(long, value_enum)]
    pub ild: Option<IldArg>,
    /// Also write per-user metrics.
    #[arg(long)]
    pub per_user: bool,
}

impl From<HoldoutArg> for Holdout {
    fn from(h: HoldoutArg) -> Self {
        match h {
            HoldoutArg::Test => Holdout::Test,
            HoldoutArg::Validation => Holdout::Validation,
        }
    }
}

impl From<IldArg> for IldDistance {
    fn from(d: IldArg) -> Self {
        match d {
            IldArg::Category => IldDistance::Category,
            IldArg::Cosine => IldDistance::Cosine,
        }
    }
}

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl Exit {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Exit {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

fn classify(e: &setrec::Error) -> u8 {
    use setrec::Error as E;
    match e {
        E::NotPsd { .. } | E::Singular | E::Degenerate(_) | E::Diverged { .. } => EXIT_NUMERIC,
        E::Empty | E::TooShort(_) | E::EmptySequence => EXIT_DATA,
        _ => EXIT_INPUT,
    }
}

/// Exit code for an error returned by [`run`].
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(x) = e.downcast_ref::<Exit>() {
        return x.code;
    }
    if let Some(x) = e.downcast_ref::<setrec::Error>() {
        return classify(x);
    }
    EXIT_INPUT
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::LearnDiv(a) => commands::learn_div(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
    }
}
