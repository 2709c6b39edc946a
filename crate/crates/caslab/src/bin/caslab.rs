use std::path::PathBuf;
use std::process::ExitCode;

use caslab::campus::load_map;
use caslab::harness::{emit, read_metrics, run_experiment, summary, ExperimentConfig, HarnessError, Mode};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caslab", version, about = "Competence-aware delivery robot experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics.csv, aggregates.csv and refinements.log.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Allow the feature space to grow (the default when the config says so).
        #[arg(long, conflicts_with = "standard")]
        modified: bool,
        /// Keep the initial feature space.
        #[arg(long)]
        standard: bool,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Parse a map file and report structural warnings.
    ValidateMap { path: PathBuf },
    /// Summarize a metrics.csv.
    Inspect {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out, seed, modified, standard, mode } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if modified || standard {
                cfg.refinement = modified;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            let result = run_experiment(&cfg)?;
            emit(&result.rows, &result.events, &out)?;
            print!("{}", summary(&result.rows));
        }
        Command::ValidateMap { path } => {
            let map = load_map(&path)?;
            println!(
                "{}: {}x{}, {} rooms, {} doors, {} crosswalks",
                path.display(),
                map.width,
                map.height,
                map.rooms.len(),
                map.doors.len(),
                map.crosswalks.len()
            );
            for w in map.warnings() {
                println!("warning: {w}");
            }
        }
        Command::Inspect { metrics } => {
            let file =
                std::fs::File::open(&metrics).map_err(|e| HarnessError::Io(format!("{}: {e}", metrics.display())))?;
            print!("{}", summary(&read_metrics(file)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("caslab: {e}");
            ExitCode::FAILURE
        }
    }
}
