//! Observables of particle runs and density fields: pairings, the
//! martingale residual, moment audits, tail mass and the particle-to-field
//! convergence study.

mod convergence;
mod diagnostics;
mod functions;

use thiserror::Error;

pub use convergence::{convergence_study, ConvergenceEntry, ConvergencePlan, ConvergenceReport};
pub use diagnostics::{
    event_count_bound, expected_mass, growth_exponent, kolmogorov_q, ks_exponential, ks_test, martingale_residual,
    moment_audit, normalized_gaps, pair, tail_mass, KsResult, MartingaleSeries, Measure, MomentAudit, MomentRow,
};
pub use functions::{default_dictionary, TestFunction};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    MissingSnapshots(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Engine(Box<crate::engine::EngineError>),
}
