use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod commands;
mod manifest;

use commands::*;
use manifest::{now_ms, write_manifest, write_outputs, RunManifest};

/// Rank aggregation benchmarks, weak-PO analysis and evaluator-generator
/// weight search.
#[derive(Debug, Parser)]
#[command(name = "raego", version)]
struct Cli {
    /// Base seed; every command is bit-identical for a fixed seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; a `<out>.manifest.json` sidecar is written next to it.
    /// Without it results go to stdout and no manifest is written.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel trials.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate a profile read from a permutation-list file or stdin.
    Aggregate(AggregateArgs),
    /// Efficiency and fairness of aggregators on random profiles.
    Bench(BenchArgs),
    /// Diversity and weak-PO precision/recall of aggregators.
    Weakpo(WeakPoArgs),
    /// Output code of each aggregator over a lattice on the weight simplex.
    Simplex(SimplexArgs),
    /// Efficiency on voters sampled from a ratings dataset.
    Dataset(DatasetArgs),
    /// Evaluator-generator loop on the toy reward landscape.
    Toy(ToyArgs),
    /// Cold start followed by the ra-re, ra-be and ra-ego policies.
    Sim(SimArgs),
    /// Comparison table from trace CSV files.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Aggregate(_) => "aggregate",
            Command::Bench(_) => "bench",
            Command::Weakpo(_) => "weakpo",
            Command::Simplex(_) => "simplex",
            Command::Dataset(_) => "dataset",
            Command::Toy(_) => "toy",
            Command::Sim(_) => "sim",
            Command::Report(_) => "report",
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    let started = now_ms();
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Aggregate(a) => aggregate(a)?,
        Command::Bench(a) => bench(a, seed)?,
        Command::Weakpo(a) => weakpo(a, seed)?,
        Command::Simplex(a) => simplex(a)?,
        Command::Dataset(a) => dataset(a, seed)?,
        Command::Toy(a) => toy(a, seed)?,
        Command::Sim(a) => sim(a, seed)?,
        Command::Report(a) => report_cmd(a, seed)?,
    };
    let outputs = write_outputs(cli.out.as_deref(), &result.outputs)?;
    if let Some(out) = &cli.out {
        let manifest = RunManifest {
            command: cli.command.name().to_string(),
            config: result.config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            outputs,
        };
        write_manifest(out, &manifest)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
