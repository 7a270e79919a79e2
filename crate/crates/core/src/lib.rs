//! Simulation of an interacting spatial birth-death process with ancestral
//! branching, together with its mean-field limit and convergence diagnostics.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod vec2;

pub mod analysis;
pub mod config;
pub mod engine;
pub mod history;
pub mod kernels;
pub mod meanfield;

pub use vec2::Vec2;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use engine::{run, RunConfig, RunOutput, Snapshot};
pub use history::{HistoryRecord, Label};
pub use kernels::ModelSpec;
pub use meanfield::{evolve, DensityField, MeanFieldConfig};
