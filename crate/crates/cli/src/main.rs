use clap::{Parser, Subcommand};
use eqsearch_cli::{cmd_generate, cmd_run, cmd_sweep, report::cmd_report, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Equation discovery over tabular data with an LLM in the loop.
#[derive(Parser)]
#[command(name = "eqsearch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset (CSV + metadata sidecar) from a TOML spec.
    Generate {
        /// Generator spec file.
        spec: PathBuf,
        /// Output directory for the dataset files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Execute a search run described by a config file.
    Run {
        /// Run config file.
        config: PathBuf,
        /// Override the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run against a replay script (deterministic offline run).
    Replay {
        /// Run config file.
        config: PathBuf,
        /// Replay script (JSON); overrides the config's backend.
        #[arg(long)]
        script: PathBuf,
        /// Override the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive plot-ready CSV tables from a run's history log.
    Report {
        /// history.jsonl of a finished run.
        history: PathBuf,
        /// Output directory (defaults to the history file's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the [sweep] grid of the config: insight probabilities x idea
    /// toggles, one run directory per cell.
    Sweep {
        /// Run config file with a [sweep] table.
        config: PathBuf,
        /// Sweep root directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate { spec, out } => {
            let report = cmd_generate(&spec, &out)?;
            println!(
                "wrote {} ({} rows) and {}",
                report.csv.display(),
                report.rows,
                report.meta.display()
            );
            println!("csv sha256 {}", report.csv_sha256);
        }
        Command::Run { config, out } => {
            let summary = cmd_run(&config, out.as_deref(), None)?;
            print_summary(&summary);
        }
        Command::Replay { config, script, out } => {
            let summary = cmd_run(&config, out.as_deref(), Some(&script))?;
            print_summary(&summary);
        }
        Command::Report { history, out } => {
            let paths = cmd_report(&history, out.as_deref())?;
            println!("wrote {}", paths.convergence.display());
            println!("wrote {}", paths.valid_rate.display());
            println!("wrote {}", paths.categories.display());
        }
        Command::Sweep { config, out } => {
            let cells = cmd_sweep(&config, &out)?;
            println!("ran {} sweep cells under {}", cells.len(), out.display());
            for cell in &cells {
                match &cell.error {
                    None => println!(
                        "  p={} {}: best_score={:?} id_nmse={:?}",
                        cell.insight_probability, cell.variant, cell.best_score, cell.id_nmse
                    ),
                    Some(e) => println!("  p={} {}: FAILED: {e}", cell.insight_probability, cell.variant),
                }
            }
        }
    }
    Ok(())
}

fn print_summary(summary: &eqsearch_cli::RunSummary) {
    let m = &summary.manifest;
    println!("run finished: {} candidates over {} iterations", m.candidates, m.iterations_completed);
    match (&m.best_expression, m.best_score) {
        (Some(e), Some(s)) => println!("best (score {s}): {e}"),
        _ => println!("no valid candidate found"),
    }
    for metrics in &m.final_metrics {
        println!(
            "  {}: nmse={} acc_tau({})={}",
            metrics.split,
            metrics.nmse.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            metrics.tau,
            metrics.acc_tau.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        );
    }
    println!("artifacts in {}", summary.output_dir.display());
}
