//! Experiment runner around `bdflow-core`: triple and experiment files,
//! threaded ε sweeps, acceptance checks and CSV/JSON reports.

pub mod checks;
pub mod config;
pub mod runner;
pub mod triple_file;

pub use checks::{Check, Outcome};
pub use config::{ExperimentConfig, Resolved};
pub use runner::{describe, run, solve_sweep};
