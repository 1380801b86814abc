use std::path::PathBuf;
use std::process::ExitCode;

use causalwm::experiment::config::parse_conditions;
use causalwm::experiment::records::format_summary;
use causalwm::experiment::{read_records, run_experiment, summarize, ExperimentConfig};
use causalwm::gridworld::{ground_truth_graph, Stage};
use causalwm::Error;
use clap::{Parser, Subcommand};
use log::error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "causalwm",
    version,
    about = "Curiosity-driven causal world-model experiments on a grid world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run both stages for every condition and seed, writing records.csv and summary.csv.
    Run {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Use seeds 0..N instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated subset of random, learning_progress, ambiguity.
        #[arg(long)]
        conditions: Option<String>,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the episodes-to-threshold summary from an existing records.csv.
    Eval {
        #[arg(long)]
        records: PathBuf,
        /// Edge as FROM:TO.
        #[arg(long, default_value = "C:H")]
        edge: String,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
    },
    /// Print the ground-truth adjacency (rows are inputs, columns are state features).
    PrintTruth {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl Failure {
    fn config(error: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error,
        }
    }

    fn classify(error: Error) -> Self {
        let code = if error.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        Failure { code, error }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            conditions,
            out,
        } => run(config, seeds, conditions, out),
        Command::Eval {
            records,
            edge,
            stage,
            threshold,
        } => eval(records, &edge, stage, threshold),
        Command::PrintTruth { stage } => {
            print_truth(stage);
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(config: PathBuf, seeds: Option<u64>, conditions: Option<String>, out: Option<PathBuf>) -> Result<(), Failure> {
    // an unreadable config file is a config problem, not a failed run
    let mut cfg = ExperimentConfig::from_file(&config).map_err(Failure::config)?;
    if let Some(n) = seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(list) = conditions {
        cfg.conditions = parse_conditions(&list).map_err(Failure::config)?;
    }
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    cfg.validate().map_err(Failure::config)?;

    let report = run_experiment(&cfg).map_err(Failure::classify)?;
    println!(
        "wrote {} records for {} runs to {}",
        report.record_count,
        report.runs.len(),
        cfg.output_dir.display()
    );
    if let Some(first) = report.failures.into_iter().next() {
        return Err(Failure {
            code: EXIT_RUNTIME,
            error: first,
        });
    }
    Ok(())
}

fn eval(records: PathBuf, edge: &str, stage: u8, threshold: f64) -> Result<(), Failure> {
    let (from, to) = edge
        .split_once(':')
        .ok_or_else(|| Failure::config(Error::Config(format!("edge {edge:?} is not FROM:TO"))))?;
    let rows = read_records(&records).map_err(Failure::config)?;
    let summary = summarize(&rows, stage, from, to, threshold).map_err(Failure::classify)?;
    print!("{}", format_summary(&summary));
    Ok(())
}

fn print_truth(stage: u8) {
    let stage = Stage::from_number(stage).expect("clap restricts stage to 1 or 2");
    let g = ground_truth_graph(stage);
    let states = stage.state_names();
    println!("input,{}", states.join(","));
    for (i, name) in stage.input_names().iter().enumerate() {
        let row: Vec<&str> = (0..states.len())
            .map(|k| if g.has_edge(i, k) { "1" } else { "0" })
            .collect();
        println!("{name},{}", row.join(","));
    }
}
