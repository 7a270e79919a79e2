//! Subcommand implementations behind the `mycelia` binary.

pub mod commands;
pub mod suite;

use std::path::PathBuf;

use clap::Args;
use mycelia_core::config::ConfigError;
use mycelia_core::engine::EngineError;
use mycelia_core::meanfield::MeanFieldError;

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML). Keys may be overridden with MYCELIA_SECTION__KEY=value.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Master seed, overriding `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reject keys the schema does not know.
    #[arg(long)]
    pub strict: bool,
}

/// Failure of a check whose outcome is the product of the command.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Usage problems that clap cannot see.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Process exit status for an error: 1 usage or config, 2 capacity,
/// 3 numerical, 4 failed check.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return match e {
                EngineError::Capacity { .. } => 2,
                EngineError::Numerical { .. } => 3,
                EngineError::Replica { source, .. } => match **source {
                    EngineError::Capacity { .. } => 2,
                    EngineError::Numerical { .. } => 3,
                    _ => 1,
                },
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<MeanFieldError>() {
            return match e {
                MeanFieldError::Config(_) => 1,
                _ => 3,
            };
        }
        if cause.is::<CheckFailed>() {
            return 4;
        }
        if cause.is::<ConfigError>() || cause.is::<Usage>() {
            return 1;
        }
    }
    1
}
