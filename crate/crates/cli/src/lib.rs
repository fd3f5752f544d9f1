//! Experiment driver behind the `ttk` binary: TOML configs, solver runs, CSV traces.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, Overrides};
pub use run::{cmd_compare, cmd_solve, cmd_sweep, Outcome};
