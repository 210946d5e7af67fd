//! Command-line front end. Exit codes: 0 on success, 1 when inputs fail
//! validation, 2 on I/O problems (including refusing to overwrite an
//! existing output directory without --force).

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use mfgmesh::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mfgmesh",
    version,
    about = "Decentralised mean-field learning experiments on grid worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a config and write CSVs, checkpoints, a
    /// summary, and plots
    Run {
        /// Path to a key = value config file
        config: PathBuf,
        /// Output directory for results
        #[arg(long)]
        out: PathBuf,
        /// Replace the output directory if it already exists
        #[arg(long)]
        force: bool,
    },
    /// Render return and exploitability plots from a results directory
    /// (or from a directory of results directories, one line each)
    Plot {
        /// Directory holding summary.json, or parent of such directories
        dir: PathBuf,
    },
    /// Load a trial checkpoint and print its approximate exploitability
    Exploit {
        /// A trial_<t>/checkpoint directory from a previous run
        checkpoint_dir: PathBuf,
    },
}

fn worker_count(trials: usize) -> Result<usize, String> {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = match std::env::var("MFGMESH_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or(format!("MFGMESH_THREADS must be a positive integer, got `{v}`"))?,
        Err(_) => available,
    };
    Ok(cap.min(trials.max(1)))
}

fn run(command: Command) -> Result<(), (String, u8)> {
    let as_exit = |e: runner::RunnerError| {
        let code = if e.is_validation() { 1 } else { 2 };
        (format!("{e}"), code)
    };
    match command {
        Command::Run { config, out, force } => {
            let cfg = runner::load_config(&config).map_err(as_exit)?;
            let workers = worker_count(cfg.trials).map_err(|m| (m, 1))?;
            let summary =
                runner::run_experiment(&config, &out, force, workers).map_err(as_exit)?;
            let last = summary.per_k.last();
            println!(
                "wrote {} ({} trials, {} iterations{})",
                out.display(),
                summary.metadata.trial_seeds.len(),
                summary.per_k.len(),
                last.map(|p| format!(", final mean return {:.4}", p.return_mean))
                    .unwrap_or_default()
            );
            Ok(())
        }
        Command::Plot { dir } => {
            let variants = runner::collect_summaries(&dir).map_err(as_exit)?;
            runner::emit_plots(&variants, &dir).map_err(as_exit)?;
            println!(
                "wrote {} and {}",
                dir.join("return.svg").display(),
                dir.join("exploitability.svg").display()
            );
            Ok(())
        }
        Command::Exploit { checkpoint_dir } => {
            let value = runner::exploit_checkpoint(&checkpoint_dir).map_err(as_exit)?;
            println!("{value}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let benign =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((message, code)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
