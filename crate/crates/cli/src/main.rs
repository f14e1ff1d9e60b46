//! `flowwatch`: simulate traffic, analyze flow captures, fit the traffic
//! model, run the live detector and export blacklist rules.
//!
//! Exit codes: 0 success, 1 detection run emitted reports, 2 usage or
//! configuration error, 3 I/O or data error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "flowwatch", version, about = "Flow-level intrusion detection")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, env = "FLOWWATCH_CONFIG")]
    config: Option<PathBuf>,
    /// Raise log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scenario as flow CSV or NetFlow v5 datagrams.
    Simulate(commands::SimulateArgs),
    /// Run the detector over a flow CSV on virtual time.
    Analyze(commands::AnalyzeArgs),
    /// Fit the traffic model to a flow CSV.
    Fit(commands::FitArgs),
    /// Collect NetFlow v5 over UDP and detect on wall-clock time.
    Watch(commands::WatchArgs),
    /// Render firewall rules from a blacklist journal.
    Blacklist(commands::BlacklistArgs),
    /// Per-window N, B, band and anomaly flag for external plotting.
    PlotData(commands::PlotDataArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<flowwatch::pipeline::PipelineError> for CliError {
    fn from(e: flowwatch::pipeline::PipelineError) -> Self {
        use flowwatch::pipeline::PipelineError as E;
        match e {
            E::Config(_) | E::Misaligned { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

/// Outcome of a successful command.
pub enum Done {
    Clean,
    Reported,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Analyze(a) => commands::analyze(config, a),
        Command::Fit(a) => commands::fit(config, a),
        Command::Watch(a) => commands::watch(config, a),
        Command::Blacklist(a) => commands::blacklist(config, a),
        Command::PlotData(a) => commands::plot_data(config, a),
    };
    match result {
        Ok(Done::Clean) => ExitCode::SUCCESS,
        Ok(Done::Reported) => ExitCode::from(1),
        Err(e) => {
            eprintln!("flowwatch: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
