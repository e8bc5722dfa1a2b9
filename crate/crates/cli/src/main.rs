use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use vefil_cli::{resolve, run, Mode};

/// Viscoelastic filament simulations, sweeps, theory tables and validation.
#[derive(Debug, Parser)]
#[command(name = "vefil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one filament and write its trajectory and observables.
    Simulate(Common),
    /// Run a grid of (mu, delta) simulations concurrently.
    Sweep(Common),
    /// Tabulate the speed coefficients and decay rates.
    TheoryTable(Common),
    /// Maximise the predicted speed over a mode budget.
    Optimize(Common),
    /// Execute the acceptance suite.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Named base configuration; the config file is applied on top.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(vefil_cli::PRESETS))]
    preset: Option<String>,
}

fn execute(mode: Mode, args: &Common) -> Result<bool> {
    let cfg = resolve(mode, args.preset.as_deref(), args.config.as_deref())?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let summary = run(&cfg, &args.out, jobs)?;
    if mode != Mode::Validate {
        println!("{}", serde_json::to_string_pretty(&summary.metadata)?);
    }
    for path in &summary.outputs {
        eprintln!("wrote {}", path.display());
    }
    Ok(summary.success)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::TheoryTable(a) => (Mode::TheoryTable, a),
        Command::Optimize(a) => (Mode::Optimize, a),
        Command::Validate(a) => (Mode::Validate, a),
    };
    match execute(mode, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
