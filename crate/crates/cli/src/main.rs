//! `shapecomp`: dataset generation, staged training, completion and
//! evaluation from one binary.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or validation error,
//! 3 missing prerequisite stage.
//!
//! Relative `--out`, `--run`, `--data` and `--manifest` paths resolve
//! against `$SHAPECOMP_OUT` when it is set.

mod commands;
mod config;
mod rundir;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shapecomp::data::{Category, Protocol};
use shapecomp::eval::Metric;
use shapecomp::Error;

use crate::rundir::Stage;

#[derive(Debug, Parser)]
#[command(name = "shapecomp", version, about = "Unpaired multimodal point cloud completion")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic part-labelled dataset with partial observations.
    GenData(GenDataArgs),
    /// Train one stage: ae, vae, then gan (or gan-l2z / gan-pc2z after ae).
    Train(TrainArgs),
    /// Complete one partial point cloud.
    Complete(CompleteArgs),
    /// Evaluate a trained model on the test split, or run a trend sweep.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Comma-separated categories.
    #[arg(long, value_delimiter = ',', default_value = "chair")]
    category: Vec<Category>,
    /// Shapes per category.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value = "parts")]
    protocol: Protocol,
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Scans per shape under the scan protocol.
    #[arg(long, default_value_t = 1)]
    scan_views: usize,
}

/// Options shared by the commands that read a run.
#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides `data`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for checkpoints and logs (overrides `run`).
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    stage: Stage,
    #[command(flatten)]
    run: RunArgs,
    /// Continue from the stage's last checkpoint.
    #[arg(long)]
    resume: bool,
    /// Write 0 in the log's seconds column so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Epochs between checkpoints.
    #[arg(long, default_value_t = 10)]
    save_every: usize,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Which trained GAN to use.
    #[arg(long, value_enum, default_value = "gan")]
    stage: Stage,
    /// Partial cloud in XYZ format.
    #[arg(long)]
    input: PathBuf,
    /// Number of completions, each from a random mode vector.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Complete cloud whose mode vector steers a single completion.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "completions")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sweep {
    Beta,
    Incompleteness,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "gan")]
    stage: Stage,
    /// Dataset manifest (default: manifest.json in the data directory).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Completions per test partial.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Comma-separated metrics: mmd, tmd, uhd.
    #[arg(long, value_delimiter = ',', default_value = "mmd,tmd,uhd")]
    metrics: Vec<Metric>,
    #[arg(long, value_enum)]
    sweep: Option<Sweep>,
    /// Comma-separated beta values for the beta sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,1,7.5,15")]
    betas: Vec<f64>,
    /// Comma-separated removed-part counts for the incompleteness sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    removed: Vec<usize>,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Prerequisite(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Prerequisite(_) => 3,
            CliError::Runtime(
                Error::InvalidInput(_) | Error::InvalidShape(_) | Error::CapacityExceeded { .. } | Error::Format { .. },
            ) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Prerequisite(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

/// `path` under `$SHAPECOMP_OUT` unless absolute.
pub fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os("SHAPECOMP_OUT") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Complete(a) => commands::complete(a),
        Command::Eval(a) => commands::eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
