use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use fpsim_cli::config::ExperimentConfig;
use fpsim_cli::{report, runner};

/// Federated poisoning simulator for radio signal classification.
#[derive(Parser)]
#[command(name = "fpsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the configured dataset and write it as a binary container.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment matrix and emit per-run CSVs plus summary.json.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for metrics and the summary.
        #[arg(long)]
        out: PathBuf,
        /// Parallel runs (each run also parallelizes internally).
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Comma-separated variant names to run (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Render SVG plots and a text table from a run directory.
    Report {
        /// Directory containing metrics CSVs (and optionally summary.json).
        run_dir: PathBuf,
        /// Output directory for the plots (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Generate { config, out } => {
            let cfg = ExperimentConfig::from_path(&config.config)?;
            let digest = runner::cmd_generate(&cfg, &out, config.seed)?;
            println!("{digest}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            out,
            workers,
            variants,
        } => {
            let cfg = ExperimentConfig::from_path(&config.config)?;
            let summary = runner::cmd_run(
                &cfg,
                &out,
                workers.max(1),
                variants.as_deref(),
                config.seed,
            )?;
            println!("{}", report::render_table(&summary));
            println!("summary: {}", out.join(runner::SUMMARY_FILE).display());
            if summary.all_completed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: some runs failed; see summary.json");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Report { run_dir, out } => {
            let out_dir = out.unwrap_or_else(|| run_dir.clone());
            let paths = report::cmd_report(&run_dir, &out_dir)?;
            print!("{}", paths.table_text);
            println!("accuracy plot: {}", paths.accuracy_plot.display());
            if let Some(p) = paths.penalty_plot {
                println!("penalty plot: {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
