//! Batch entry points for consensus-lab. `main` only parses arguments and
//! maps the result to an exit code, so every command is callable from tests.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (including a sweep that
//! disagrees with the consensus square), 2 on a usage or config error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use consensus_lab::config::LabConfig;

pub mod commands;

#[derive(Debug, Parser)]
#[command(name = "consensus-lab", version, about = "Bias-controlled opinion dynamics between a robot and a human")]
pub struct Cli {
    /// JSON config; sections left out keep the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Only log errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    /// Log debug detail.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a (b_r, b_h) bias grid and check it against the consensus square.
    Sweep(SweepArgs),
    /// Locate the equilibria and nullcline crossings at one bias pair.
    Equilibria(EquilibriaArgs),
    /// Simulate the eight-trial protocol for a synthetic cohort.
    Protocol(ProtocolArgs),
    /// Outcome tables and marginal-homogeneity test over a log directory.
    Stats(StatsArgs),
    /// Host live sessions over WebSocket until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
    /// Grid points per axis (overrides the config).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Half-width of the bias range (overrides the config).
    #[arg(long)]
    pub range: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EquilibriaArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub br: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub bh: f64,
    #[arg(long, default_value = "equilibria")]
    pub out: PathBuf,
    /// Vertices per axis of the contour grid over [-3, 3]^2.
    #[arg(long, default_value_t = 401)]
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HumanKind {
    /// Opinion-dynamics participants drawn from the population ranges.
    Model,
    Direct,
    MidSwitch,
    MultiSwitch,
    EarlyStrategicSwitch,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = 51)]
    pub participants: usize,
    #[arg(long, value_enum, default_value_t = HumanKind::Model)]
    pub human: HumanKind,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "sessions")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub logs: PathBuf,
    /// Also write the summary JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Overrides CONSENSUS_LAB_PORT.
    #[arg(long)]
    pub port: Option<u16>,
    /// Overrides CONSENSUS_LAB_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<consensus_lab::Error> for CliError {
    fn from(e: consensus_lab::Error) -> Self {
        use consensus_lab::Error as E;
        match e {
            E::Config(_) | E::Argument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<LabConfig, CliError> {
    match path {
        Some(p) => Ok(LabConfig::load(p)?),
        None => Ok(LabConfig::default()),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let lab = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Sweep(a) => commands::sweep(lab, &a).map(|s| println!("{s}")),
        Command::Equilibria(a) => commands::equilibria(&lab, &a).map(|s| println!("{s}")),
        Command::Protocol(a) => commands::protocol(&lab, &a).map(|s| println!("{s}")),
        Command::Stats(a) => commands::stats(&a).map(|s| println!("{s}")),
        Command::Serve(a) => commands::serve(lab, &a),
    }
}
