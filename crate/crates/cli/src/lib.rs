//! Experiment runner for learnable-prior diffusion samplers: configuration,
//! training runs, checkpoint evaluation and plot-table export.

pub mod config;
pub mod error;
pub mod export;
pub mod run;

pub use config::{Algorithm, ExperimentConfig, PriorKind, TargetSpec};
pub use error::CliError;
