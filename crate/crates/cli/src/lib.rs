//! Experiment harness behind the `cepra` command-line tool.

pub mod aggregate;
pub mod config;
pub mod experiment;

pub use config::{default_methods, ExperimentConfig, MethodConfig};
pub use experiment::{prepare, run_experiment, sweep, verify_manifest, Manifest, RunOutcome};
