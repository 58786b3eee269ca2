//! `grapal` — batch runner for graph continual-learning experiments.

mod config;
mod dataset;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grapal::evaluator::BasicMetric;
use grapal::io::{validate_dir, write_graph_dataset, write_node_dataset, Requirements};
use grapal::scenario::{generate_synthetic, Dataset, Level, Setting, SyntheticSpec};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] grapal::Error),
}

#[derive(Parser)]
#[command(name = "grapal", version, about = "Graph continual-learning benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method, grid point and seed of a config; write a JSON report.
    Run {
        config: PathBuf,
        /// Added to every seed in the config.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Basic metric(s) to report, overriding the config; the first one
        /// drives AP/AF/INT/FWT.
        #[arg(long = "metric")]
        metrics: Vec<BasicMetric>,
        /// Report path (default: the config's `output`, else
        /// `<config>.report.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory from a TOML spec.
    Gen {
        spec: PathBuf,
        /// Output directory (default: the spec's file stem).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a dataset directory and list what ingestion would drop.
    Validate {
        dir: PathBuf,
        /// Require the attribute this setting splits on.
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        level: Option<Level>,
    },
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn cmd_run(
    path: &Path,
    seed_offset: u64,
    metrics: Vec<BasicMetric>,
    out: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    let mut cfg = RunConfig::load(path)?;
    for s in &mut cfg.seeds {
        *s = s.checked_add(seed_offset).ok_or_else(|| CliError::Config("seed overflow".into()))?;
    }
    if !metrics.is_empty() {
        cfg.metrics = Some(metrics);
    }
    let out = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| path.with_extension("report.json"));
    let report = run::execute(&cfg)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    write(&out, &(json + "\n"))?;
    print!("{}", run::summary(&report));
    println!("report written to {}", out.display());
    if report.succeeded() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: every run failed");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_gen(path: &Path, out: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let out = out.unwrap_or_else(|| path.with_extension(""));
    match generate_synthetic(&spec)? {
        Dataset::Nodes(g) | Dataset::Edges(g) => write_node_dataset(&out, &g)?,
        Dataset::Graphs(c) => write_graph_dataset(&out, &c)?,
    }
    println!("dataset written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(dir: &Path, setting: Option<Setting>, level: Option<Level>) -> ExitCode {
    let needs = Requirements {
        labels: level != Some(Level::LinkPrediction),
        domain: setting == Some(Setting::DomainIl),
        time: setting == Some(Setting::TimeIl),
    };
    print!("{}", validate_dir(dir, needs));
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed_offset, metrics, out } => cmd_run(&config, seed_offset, metrics, out),
        Command::Gen { spec, out } => cmd_gen(&spec, out),
        Command::Validate { dir, setting, level } => Ok(cmd_validate(&dir, setting, level)),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
