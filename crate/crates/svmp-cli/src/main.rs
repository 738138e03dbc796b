//! Experiment CLI: single runs, grids over sample sizes and step scales,
//! and the numerical verification suite.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 run completed with the
//! divergence flag set.

mod grid;
mod run;
mod verify;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "svmp",
    about = "Stochastic variational message passing for Gaussian matrix factorization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write its log, checkpoint and config echo
    Run(run::RunArgs),
    /// Run a grid of configurations and summarize convergence
    Grid(grid::GridArgs),
    /// Run the numerical verification checks
    Verify(verify::VerifyArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run::cmd_run(&args),
        Command::Grid(args) => grid::cmd_grid(&args),
        Command::Verify(args) => verify::cmd_verify(&args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
