//! The `fogguard` command-line tool.

use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
pub mod manifest;

pub use commands::run;
pub use manifest::{ReportEntry, RunEntry, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "fogguard",
    version,
    about = "Failure-resilient distributed neural networks over edge, fog and cloud nodes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one or both variants for each seed.
    Train(TrainArgs),
    /// Accuracy of a trained model with chosen nodes failed.
    Evaluate(EvaluateArgs),
    /// Average accuracy under reliability settings, per model and aggregated.
    Resiliency(ResiliencyArgs),
    /// Run one physical node as a network daemon.
    ServeNode(ServeNodeArgs),
    /// Run the test split through one daemon per node.
    RunDistributed(DistributedArgs),
    /// Run the daemons under a chaos plan and compare with the simulator.
    Chaos(DistributedArgs),
    /// Rebuild the aggregate table from the manifest.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Vanilla,
    Deepfogguard,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub variant: VariantArg,
    /// Seeds to train; the config's when absent.
    #[arg(long = "seed", num_args = 1..)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub seed: u64,
    /// Comma-separated ids of failed nodes.
    #[arg(long, value_delimiter = ',')]
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Args)]
pub struct ResiliencyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub variant: VariantArg,
    #[arg(long = "seed", num_args = 1..)]
    pub seeds: Vec<u64>,
    /// Reliability setting names; every configured one when absent.
    #[arg(long = "tier", num_args = 1..)]
    pub tiers: Vec<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub mc_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ServeNodeArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub node: String,
    #[arg(long)]
    pub listen: SocketAddr,
    #[arg(long)]
    pub coordinator: SocketAddr,
    /// Out-edge destination as `id=host:port`; repeat per destination.
    #[arg(long = "peer", value_parser = parse_peer)]
    pub peers: Vec<(String, SocketAddr)>,
    #[arg(long)]
    pub round_timeout_ms: Option<u64>,
    #[arg(long)]
    pub heartbeat_ms: Option<u64>,
    #[arg(long)]
    pub suspicion_ms: Option<u64>,
}

fn parse_peer(s: &str) -> Result<(String, SocketAddr), String> {
    let (id, addr) = s.split_once('=').ok_or_else(|| format!("expected id=host:port, got {s}"))?;
    let addr = addr.parse().map_err(|e| format!("{addr}: {e}"))?;
    Ok((id.to_string(), addr))
}

#[derive(Debug, Clone, Args)]
pub struct DistributedArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Chaos plan TOML.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Shorthand chaos events as `node@instance`.
    #[arg(long = "kill", value_parser = parse_kill)]
    pub kills: Vec<(String, u64)>,
    /// Run daemons as threads of this process instead of child processes.
    #[arg(long)]
    pub threads: bool,
    #[arg(long)]
    pub round_timeout_ms: Option<u64>,
    /// Largest per-element logit difference the chaos verdict accepts.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

fn parse_kill(s: &str) -> Result<(String, u64), String> {
    let (node, at) = s.split_once('@').ok_or_else(|| format!("expected node@instance, got {s}"))?;
    Ok((node.to_string(), at.parse().map_err(|e| format!("{at}: {e}"))?))
}

/// Error categories, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Other = 1,
    Config = 2,
    Data = 3,
    Runtime = 4,
    Verdict = 5,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Other => "error",
            Category::Config => "config",
            Category::Data => "data",
            Category::Runtime => "runtime",
            Category::Verdict => "verdict",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { category: Category::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { category: Category::Data, message: message.into() }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self { category: Category::Other, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.category as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.category.name(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fogguard_core::Error> for CliError {
    fn from(e: fogguard_core::Error) -> Self {
        use fogguard_core::Error as E;
        let category = match &e {
            E::Config(_)
            | E::Topology(_)
            | E::Reliability(_)
            | E::EnumerationLimit { .. }
            | E::ShapeMismatch(_)
            | E::DimensionMismatch { .. } => Category::Config,
            E::Data { .. }
            | E::Dataset(_)
            | E::Csv(_)
            | E::Json(_)
            | E::WeightFormat(_)
            | E::LabelOutOfRange { .. } => Category::Data,
            E::Runtime(_) | E::Wire(_) => Category::Runtime,
            _ => Category::Other,
        };
        Self { category, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}
