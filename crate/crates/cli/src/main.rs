#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod viz;

use commands::Setup;
use config::RunConfig;

/// Demand-aware LEO topology experiments.
#[derive(Parser)]
#[command(name = "leo-topo", version)]
struct Cli {
    /// TOML run configuration; defaults apply to every omitted key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the shell over the time window and write the ephemeris.
    Constellation,
    /// Build the configured topology and report graph-level stretch and hops.
    Topology,
    /// Run the packet-level simulation.
    Simulate,
    /// Motivating example and bound checks on seeded flat instances.
    Flat,
    /// Write GeoJSON and CZML for an external globe viewer.
    ExportViz {
        /// Topology CSV to export instead of building one.
        #[arg(long)]
        topology: Option<PathBuf>,
    },
    /// Regional flow statistics of the configured demand.
    AnalyzeDemand,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Constellation => "constellation",
            Command::Topology => "topology",
            Command::Simulate => "simulate",
            Command::Flat => "flat",
            Command::ExportViz { .. } => "export-viz",
            Command::AnalyzeDemand => "analyze-demand",
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    cfg.validate()?;
    commands::prepare_out(&cfg, cli.command.name())?;
    if let Command::Flat = cli.command {
        return commands::flat(&cfg);
    }
    let setup = Setup::new(cfg)?;
    match &cli.command {
        Command::Constellation => commands::constellation(&setup),
        Command::Topology => commands::topology(&setup),
        Command::Simulate => commands::simulate(&setup),
        Command::ExportViz { topology } => commands::export_viz(&setup, topology.as_deref()),
        Command::AnalyzeDemand => commands::analyze_demand(&setup),
        Command::Flat => unreachable!(),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
