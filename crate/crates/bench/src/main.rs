use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use boostiv_bench::report::{format_table, reaggregate};
use boostiv_bench::{parse_config, run_experiment, write_report, BenchError, ExperimentConfig};
use clap::{Parser, Subcommand};

/// Exit codes: 0 success, 1 config error, 2 runtime failure.
#[derive(Parser)]
#[command(name = "bench", version, about = "Monte Carlo benchmarks for boostIV and sieve NPIV")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write results.csv, summary.json and config.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `n_reps`.
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for replications.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Record per-fit wall time (makes reports run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Parse and validate a config, printing it with defaults applied.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute summary.json from a report directory's results.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    let mut config = parse_config(&text)?;
    if let Ok(seed) = std::env::var("BENCH_SEED") {
        config.base_seed = seed
            .trim()
            .parse()
            .with_context(|| format!("BENCH_SEED must be an unsigned integer, got {seed:?}"))
            .map_err(Failure::Config)?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, reps, out, jobs, timing } => {
            let mut cfg = load_config(&config)?;
            if let Some(r) = reps {
                cfg.n_reps = r;
            }
            if let Some(o) = out {
                cfg.output = Some(o.to_string_lossy().into_owned());
            }
            cfg.timing |= timing;
            cfg.validate()?;
            let dir = PathBuf::from(cfg.output.clone().unwrap_or_else(|| "bench-out".into()));
            let report = run_experiment(&cfg, jobs)?;
            write_report(&report, &dir)?;
            print!("{}", format_table(&report.rows));
            if !report.rows.is_empty() && report.rows.iter().all(|r| !r.is_ok()) {
                let first = &report.rows[0].status;
                return Err(Failure::Runtime(anyhow::anyhow!("every replication failed; first: {first}")));
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            Ok(())
        }
        Command::Report { input } => {
            let report = reaggregate(&input)?;
            print!("{}", format_table(&report.rows));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
