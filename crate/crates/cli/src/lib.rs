//! Experiment runner for the continual distillation benchmark: scenario
//! generation, teacher pretraining, method x seed grids, ratio sweeps and
//! result analysis. The `cdbench` binary is a thin layer over this crate.

pub mod analyze;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod summary;

pub use analyze::{cmd_analyze, Analysis};
pub use commands::{cmd_gen, cmd_run, cmd_sweep, cmd_teachers, Overrides};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
