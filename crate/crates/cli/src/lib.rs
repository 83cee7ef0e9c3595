//! Command-line driver: synthetic data, feature selection, cascade training,
//! prediction and evaluation.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage or
//! configuration errors.

pub mod commands;
pub mod config;
pub mod model_file;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, WeightMode, DEFAULT_RATES};
pub use model_file::{ModelFile, FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<dforest::Error> for CliError {
    fn from(e: dforest::Error) -> Self {
        match e {
            dforest::Error::InvalidParam(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dforest", version, about = "Cascade deep forest on boosted trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic imbalanced dataset as CSV.
    GenData(GenDataArgs),
    /// Rank features by boosted-tree importance and keep the top k.
    Select(SelectArgs),
    /// Train a cascade and write the model file.
    Train(TrainArgs),
    /// Score rows with a trained model.
    Predict(PredictArgs),
    /// Compare scores with labels.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub informative: usize,
    #[arg(long, default_value_t = 0.01)]
    pub pos_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub top_k: usize,
    /// JSON file receiving the kept indices and all importances.
    #[arg(long)]
    pub out_indices: PathBuf,
    /// CSV file receiving the projected data.
    #[arg(long)]
    pub out_data: Option<PathBuf>,
    /// Supplies the tree parameters, label column, weights and seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory for job outputs; a rerun with the same inputs resumes from it.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Selection file from `select`; the model then accepts the original columns.
    #[arg(long)]
    pub selected: Option<PathBuf>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Stop after this many jobs, as if interrupted.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with a `score` column.
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV holding the label column.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Comma-separated interrupt rates.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long)]
    pub pr_out: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Select(a) => commands::select(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
