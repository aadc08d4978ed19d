use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poolal_cli::commands::{self, ServeOptions};

/// Pool-based active learning with optional pretraining.
#[derive(Parser)]
#[command(name = "poolal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment with oracle or simulated annotators.
    Run {
        /// Run file (TOML) with an `[experiment]` table.
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic dataset from a generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the manifest and payload files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print UA and WA of a saved classifier on a dataset.
    Evaluate {
        /// Classifier header written by `run` (`model.toml`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        dataset: PathBuf,
        /// Pretraining header (`tapt.toml`) when the run used pretraining.
        #[arg(long)]
        tapt: Option<PathBuf>,
    },
    /// Run with human annotators behind the HTTP annotation API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the snapshot in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop serving when the run completes.
        #[arg(long)]
        exit_on_finish: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { config } => {
            let out = commands::run(&config)?;
            print_outputs(&out);
        }
        Command::Generate { spec, out } => {
            let manifest = commands::generate(&spec, &out)?;
            println!("{}", manifest.display());
        }
        Command::Evaluate { checkpoint, dataset, tapt } => {
            let ev = commands::evaluate_checkpoint(&checkpoint, &dataset, tapt.as_deref())?;
            println!("ua\t{}\nwa\t{}", ev.ua, ev.wa);
        }
        Command::Serve { config, resume, exit_on_finish } => {
            let rt = tokio::runtime::Runtime::new()?;
            let out = rt.block_on(commands::serve(&config, ServeOptions { resume, exit_on_finish }))?;
            print_outputs(&out);
        }
    }
    Ok(())
}

fn print_outputs(out: &commands::RunOutputs) {
    println!("final ua\t{}", out.report.final_ua());
    println!("report\t{}", out.tsv.display());
    println!("report\t{}", out.json.display());
    println!("model\t{}", out.model.display());
    if let Some(t) = &out.tapt {
        println!("tapt\t{}", t.display());
    }
}
