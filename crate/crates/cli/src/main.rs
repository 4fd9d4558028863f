//! Command-line driver for the graphon large-deviations toolkit.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<graphon_ldp::Error> for CliError {
    fn from(e: graphon_ldp::Error) -> Self {
        match e {
            graphon_ldp::Error::Io(io) => CliError::Io(io),
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "graphon-ldp",
    version,
    about = "Mean-field limits, rate functions and minimum-action paths for SIS dynamics on graphon networks"
)]
struct Cli {
    /// TOML experiment config (defaults are used for anything missing).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set model.beta=1.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for replica-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample a network from the graphon and write it in the adjacency format.
    Sample,
    /// Simulate the SIS dynamics on one sampled network.
    Simulate,
    /// Solve the mean-field density equation.
    Meanfield,
    /// Compare finite-N simulations with the mean field over a size sweep.
    Compare,
    /// Evaluate the rate functions on the (optionally perturbed) mean-field flux.
    Rate,
    /// Minimize the action between two endpoint profiles.
    Action,
    /// Exact Poisson-tail slopes against the uncoupled rate function.
    LdpCheck,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let text = match &cli.config {
        Some(path) => {
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => String::new(),
    };
    let cfg = config::load(&text, &cli.overrides)?;
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut out = output::OutputDir::create(&cli.out)?;
    let result = match cli.command {
        Command::Sample => commands::sample(&cfg, &mut out),
        Command::Simulate => commands::simulate(&cfg, &mut out),
        Command::Meanfield => commands::meanfield(&cfg, &mut out),
        Command::Compare => commands::compare(&cfg, &mut out),
        Command::Rate => commands::rate(&cfg, &mut out),
        Command::Action => commands::action(&cfg, &mut out),
        Command::LdpCheck => commands::ldp_check(&cfg, &mut out),
    };
    // artifacts of a run that ends in a numerical failure are still listed
    out.finish()?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
