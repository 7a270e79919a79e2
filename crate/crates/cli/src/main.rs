//! `mycelia`: run particle replicas, the mean-field solver, convergence
//! studies, the validation suite and deterministic replays.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mycelia_cli::{commands, exit_code, suite, Common};

#[derive(Parser, Debug)]
#[command(
    name = "mycelia",
    version,
    about = "Historical branching particle system and its mean-field limit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run particle replicas and write snapshots, events and statistics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Solve the mean-field equation and write field snapshots and monitors.
    Meanfield {
        #[command(flatten)]
        common: Common,
    },
    /// Compare particle runs at several population sizes with the mean field.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated population sizes, at least two.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<u64>>,
        /// Replicas per population size.
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Run the oracle and invariant suite against a config.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Re-run one stored replica and optionally check it byte for byte.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        replica: usize,
        /// Apply this event log instead of sampling events.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Directory of a previous `simulate` run to compare against.
        #[arg(long)]
        verify: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate { common, replicas } => commands::simulate(&common, replicas),
        Command::Meanfield { common } => commands::meanfield(&common),
        Command::Compare {
            common,
            n_list,
            replicas,
        } => commands::compare(&common, n_list, replicas),
        Command::Validate { common } => suite::validate(&common),
        Command::Replay {
            common,
            replica,
            events,
            verify,
        } => commands::replay(&common, replica, events, verify),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
