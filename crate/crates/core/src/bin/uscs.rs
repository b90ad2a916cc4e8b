use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uscs::harness;
use uscs::trainer::TrainConfig;

#[derive(Parser)]
#[command(version, about = "Train, evaluate and compare USCS segmentation runs")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Write a complete default configuration to stdout or a file.
    Init { out: Option<PathBuf> },
    /// Train one configuration.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a run directory's checkpoint.
    Eval {
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a sweep over arms and seeds.
    Ablate {
        config: PathBuf,
        sweep: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter, MAC and forward-pass table.
    Cost {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare run directories; the first is the baseline.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> uscs::Result<()> {
    match cli.verb {
        Verb::Init { out } => {
            let text = uscs::config::to_text(&TrainConfig::default());
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| uscs::Error::InvalidArgument(format!("{}: {e}", p.display())))?,
                None => print!("{text}"),
            }
        }
        Verb::Train { config, out } => {
            harness::cmd_train(&config, out)?;
        }
        Verb::Eval { run, checkpoint } => {
            harness::cmd_eval(&run, checkpoint)?;
        }
        Verb::Ablate { config, sweep, out } => {
            harness::cmd_ablate(&config, &sweep, out)?;
        }
        Verb::Cost { config, out } => {
            harness::cmd_cost(&config, out)?;
        }
        Verb::Report { runs, csv } => {
            harness::cmd_report(&runs, csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
