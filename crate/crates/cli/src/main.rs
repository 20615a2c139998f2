use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rbsde_horizon_cli::config::SCHEMA;
use rbsde_horizon_cli::{execute, Options};

#[derive(Parser)]
#[command(name = "rbsde-horizon", version, about = "Reflected BSDEs with a random horizon on a binary tree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a scenario and write the output tables.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (falls back to RBSDE_THREADS).
        #[arg(long)]
        threads: Option<usize>,
        /// Comma-separated p grid, overriding `p_grid`.
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
    },
    /// Run only the identity and estimate checks; writes nothing.
    Verify {
        config: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
    },
    /// Print the scenario file schema.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (config, opts) = match cli.command {
        Command::Schema => {
            print!("{SCHEMA}");
            return ExitCode::SUCCESS;
        }
        Command::Run { config, out, threads, p } => (config, Options { out, threads, p_grid: p, verify_only: false }),
        Command::Verify { config, threads, p } => (config, Options { out: None, threads, p_grid: p, verify_only: true }),
    };
    match execute(&config, &opts) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            for f in &outcome.failures {
                eprintln!("FAIL {f}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("rbsde-horizon: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
