//! Command-line pipeline: generate scenarios, validate graphs, train,
//! evaluate, run ablations, check gradients and count FLOPs.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;
pub mod data;
pub mod manifest;

pub use config::{ModelFlags, RunConfig, TrainFlags};
pub use manifest::RunManifest;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const SCHEMA: i32 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: exit::USAGE,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: exit::NUMERIC,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<etdnet::Error> for CliError {
    fn from(e: etdnet::Error) -> Self {
        use etdnet::Error as E;
        let code = match &e {
            E::Config { .. } => exit::USAGE,
            E::NanLoss { .. } | E::NonFinite { .. } => exit::NUMERIC,
            E::SchemaMismatch(_) | E::Schema { .. } | E::Parse { .. } => exit::SCHEMA,
            _ => exit::FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: exit::FAILURE,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError {
            code: exit::SCHEMA,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "etdnet", version, about = "Full-history temporal graphs and the edge-type decoupled network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scenario as graph.jsonl plus metadata.json.
    Generate(GenerateArgs),
    /// Load graphs and report their sizes; fails on any schema or integrity error.
    Validate(ValidateArgs),
    /// Train one model and write metrics, timings, checkpoint and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train every requested mode on the same data and tabulate the results.
    Ablate(AblateArgs),
    /// Finite-difference check of every parameter path on a mixed random graph.
    Gradcheck(GradcheckArgs),
    /// FLOP counts over replicated copies of a scenario, with a linear fit.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub scenario: Scenario,
}

#[derive(Debug, Subcommand)]
pub enum Scenario {
    Traffic(TrafficArgs),
    Ledger(LedgerArgs),
    /// The eight-node binary micro-task.
    Micro(OutArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScenesArgs {
    /// JSON file with generator fields; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenes; more than one writes `scene_NNN/` subdirectories
    /// with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrafficArgs {
    #[arg(long)]
    pub vehicles: Option<usize>,
    /// Road objects; defaults to 3/5 of the vehicle count, rounded down.
    #[arg(long)]
    pub statics: Option<usize>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub arena: Option<f64>,
    #[command(flatten)]
    pub common: ScenesArgs,
}

#[derive(Debug, Args)]
pub struct LedgerArgs {
    #[arg(long)]
    pub months: Option<usize>,
    #[arg(long)]
    pub tx_per_month: Option<usize>,
    #[arg(long)]
    pub illicit: Option<f64>,
    #[arg(long)]
    pub unknown: Option<f64>,
    #[arg(long)]
    pub fan_in_max: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub addresses: Option<usize>,
    #[arg(long)]
    pub chain_hops: Option<usize>,
    #[command(flatten)]
    pub common: ScenesArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Graph files or directories; may repeat.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Training graphs: JSONL files or directories of them; may repeat.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Validation graphs. Without them the last `--val-fraction` of the
    /// training units is held out; a single unit validates on itself.
    #[arg(long)]
    pub val: Vec<PathBuf>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Split every graph into windows of this many timesteps (0 keeps whole graphs).
    #[arg(long)]
    pub unit_steps: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON with optional `model`, `train` and `data` objects. A manifest
    /// from an earlier run is accepted as is.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub unit_steps: Option<u32>,
    /// Binary operating point; swept on the data when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the metrics as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Modes to compare; all five by default.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<String>,
    /// Learning rates to try per mode; the best validation monitor wins.
    #[arg(long, value_delimiter = ',')]
    pub lr_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub wd_grid: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON with an optional `model` object.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Seed for the graph, the parameters and coordinate sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Write the per-path report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Replication factors of the base scenario.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value = "traffic")]
    pub scenario: String,
    /// Base graph instead of a generated scenario.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the table as CSV and the reports as JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(cli: Cli, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => commands::generate::run(a, out),
        Command::Validate(a) => commands::validate::run(a, out),
        Command::Train(a) => commands::train::run(a, argv, out),
        Command::Eval(a) => commands::eval::run(a, out),
        Command::Ablate(a) => commands::ablate::run(a, argv, out),
        Command::Gradcheck(a) => commands::gradcheck::run(a, out),
        Command::Bench(a) => commands::bench::run(a, out),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{e}");
            return exit::USAGE;
        }
        Err(e) => {
            let _ = write!(out, "{e}");
            return exit::OK;
        }
    };
    match run(cli, &argv, out) {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}
