use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noicca::harness::{self, ExperimentConfig};
use noicca::Result;

/// Deep CCA experiments: NOI, STOL and linear CCA solvers.
#[derive(Parser)]
#[command(name = "noicca", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write history.csv, model.bin and result.txt.
    Run { config: PathBuf },
    /// Grid search over rho, minibatch, eta and mu; writes sweep.csv and
    /// the best trial's artifacts.
    Grid { config: PathBuf },
    /// Total correlations of a saved model on the config's splits.
    Eval { model: PathBuf, config: PathBuf },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    let seed = std::env::var("NOICCA_SEED").ok();
    ExperimentConfig::load(path)?.with_seed_override(seed.as_deref())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let out = harness::run(&cfg)?;
            print!("{}", out.eval.to_text());
            println!("artifacts written to {}", cfg.output.display());
        }
        Command::Grid { config } => {
            let cfg = load(&config)?;
            let out = harness::grid(&cfg)?;
            print!("{}", harness::sweep_csv(&out.trials));
            let t = &out.trials[out.best];
            println!(
                "best trial {}: rho={} minibatch={} eta={} mu={}",
                out.best, t.rho, t.minibatch, t.eta, t.mu
            );
            print!("{}", out.best_run.eval.to_text());
            println!("artifacts written to {}", cfg.output.display());
        }
        Command::Eval { model, config } => {
            let cfg = load(&config)?;
            print!("{}", harness::eval(&model, &cfg)?.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("noicca: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
