use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use dtnse_core::{emit_csv, parse_config, run_scenario, ContactMode, Mode};

/// Solve, learn and simulate satisfaction equilibria of reward-based DTN
/// content delivery. Results are written as CSV.
#[derive(Debug, Parser)]
#[command(name = "dtnse", version)]
struct Cli {
    /// solve-pse | solve-mse | solve-ese | region | learn | simulate | pareto-grid
    #[arg(value_parser = parse_mode)]
    mode: Mode,

    /// Scenario file (`key = value` lines)
    #[arg(long)]
    config: PathBuf,

    /// Overrides `seed` from the scenario file
    #[arg(long)]
    seed: Option<u64>,

    /// Output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides `trials` from the scenario file
    #[arg(long)]
    trials: Option<u64>,

    /// model | physical
    #[arg(long, value_parser = parse_contact_mode)]
    contact_mode: Option<ContactMode>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_contact_mode(s: &str) -> Result<ContactMode, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<()> {
    let text = fs::read_to_string(&cli.config)
        .with_context(|| format!("cannot read config {}", cli.config.display()))?;
    let mut config =
        parse_config(&text).with_context(|| format!("invalid config {}", cli.config.display()))?;
    config.mode = cli.mode;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(trials) = cli.trials {
        anyhow::ensure!(trials >= 1, "--trials must be >= 1");
        config.trials = trials;
    }
    if let Some(mode) = cli.contact_mode {
        config.contact_mode = mode;
    }
    if cli.out.is_some() {
        config.output = cli.out;
    }

    let table = run_scenario(&config)?;
    match &config.output {
        Some(path) => emit_csv(&table, path)?,
        None => table
            .write_csv(io::stdout().lock())
            .context("cannot write to stdout")?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("dtnse: error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
