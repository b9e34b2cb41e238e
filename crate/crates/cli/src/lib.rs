//! Command-line front end: reproducible runs over the training protocols,
//! each leaving a run directory with CSV results, the resolved
//! configuration and a manifest.

mod commands;
pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::execute;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

/// Environment variable naming the default root for run directories.
pub const OUT_ENV: &str = "TSTCC_OUT";
/// Overrides the executable used for `--jobs` worker processes.
pub const WORKER_ENV: &str = "TSTCC_WORKER_EXE";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self::new(EXIT_NUMERIC, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<tstcc_core::Error> for CliError {
    fn from(e: tstcc_core::Error) -> Self {
        use tstcc_core::Error as E;
        let code = match &e {
            E::Config(_) | E::Param(_) | E::Shape(_) => EXIT_CONFIG,
            E::Io(_) | E::Format(_) => EXIT_IO,
            E::Numeric(_) => EXIT_NUMERIC,
            E::Contract(_) | E::Index { .. } => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Parser, Debug, Clone)]
#[command(name = "tstcc", version, about = "Contrastive self-supervised representation learning for time series")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run directory [default: $TSTCC_OUT/<command>-<run id>, root `runs`]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Configuration file (`[section]` headers and `key = value` lines)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration value, applied after --config
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Seeds to repeat the protocol with [default: train.seed]
    #[arg(long, global = true, value_delimiter = ',', value_name = "LIST")]
    pub seeds: Option<Vec<u64>>,
    /// Worker processes for grid commands
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress output
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[arg(long, global = true, hide = true)]
    pub cell: Option<usize>,
    #[arg(long, global = true, hide = true)]
    pub cell_output: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate a synthetic labeled dataset
    Synth(SynthArgs),
    /// Split a dataset into train, validation and test files
    Split(SplitArgs),
    /// Self-supervised pretraining; saves checkpoints and loss logs
    Pretrain(PretrainArgs),
    /// Linear classifier on frozen pretrained features
    LinearEval(LinearEvalArgs),
    /// End-to-end fine-tuning with a fraction of the labels
    Finetune(FinetuneArgs),
    /// Cross-domain transfer over source/target pairs
    Transfer(TransferArgs),
    /// Component ablation: five objective and augmentation variants
    Ablate(DataArgs),
    /// Sweep one hyperparameter
    Sensitivity(SensitivityArgs),
    /// Original, weak and strong views of one sample
    AugmentPreview(AugmentPreviewArgs),
    /// Finite-difference gradient checks of every differentiable block
    Gradcheck(GradcheckArgs),
    /// Loss implementations against loop references and invariances
    OracleCheck(OracleCheckArgs),
    /// Re-run a manifest and compare its artifacts
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Split(_) => "split",
            Command::Pretrain(_) => "pretrain",
            Command::LinearEval(_) => "linear-eval",
            Command::Finetune(_) => "finetune",
            Command::Transfer(_) => "transfer",
            Command::Ablate(_) => "ablate",
            Command::Sensitivity(_) => "sensitivity",
            Command::AugmentPreview(_) => "augment-preview",
            Command::Gradcheck(_) => "gradcheck",
            Command::OracleCheck(_) => "oracle-check",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2500)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 128)]
    pub length: usize,
    /// Standard deviation of additive noise
    #[arg(long, default_value_t = 0.6)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    /// Working-condition preset, 0 to 3
    #[arg(long, default_value_t = 0)]
    pub domain: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    /// Also export `dataset.csv`
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Train, validation and test fractions
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
    pub fractions: Vec<f64>,
    /// Keep every subject within one part
    #[arg(long)]
    pub subject_wise: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Training set (labels ignored during pretraining)
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PretrainArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Also run linear evaluation against this set
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct LinearEvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Use this encoder instead of pretraining one
    #[arg(long, value_name = "FILE", conflicts_with = "random_init")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a randomly initialized encoder
    #[arg(long)]
    pub random_init: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Label fractions of the training set
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub fraction: Vec<f64>,
    /// Draw labeled subsets per class
    #[arg(long)]
    pub stratified: bool,
    /// Start from this encoder instead of pretraining one
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Also train from scratch on the same labels
    #[arg(long)]
    pub scratch: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TransferArgs {
    /// Source training sets
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub source: Vec<PathBuf>,
    /// Target test sets
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub target: Vec<PathBuf>,
    /// Use four generated working conditions instead of files
    #[arg(long, conflicts_with_all = ["source", "target"])]
    pub synthetic: bool,
    /// Training samples per generated domain
    #[arg(long, default_value_t = 600)]
    pub samples: usize,
    /// Test samples per generated domain
    #[arg(long, default_value_t = 300)]
    pub test_samples: usize,
    /// Length of generated series
    #[arg(long, default_value_t = 128)]
    pub length: usize,
    /// Maximum number of scenarios
    #[arg(long, default_value_t = 12)]
    pub limit: usize,
}

#[derive(Args, Debug, Clone)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `lambda1`, `lambda2`, `k_ratio` or any `section.key`
    #[arg(long)]
    pub param: String,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Option<Vec<String>>,
}

#[derive(Args, Debug, Clone)]
pub struct AugmentPreviewArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Random instances per primitive
    #[arg(long, default_value_t = 10)]
    pub instances: u64,
}

#[derive(Args, Debug, Clone)]
pub struct OracleCheckArgs {
    /// Random cases per comparison
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// `manifest.json` of the run to repeat
    pub manifest: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli, args.get(1..).unwrap_or_default().to_vec(), None) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
