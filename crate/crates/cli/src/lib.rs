//! Config-driven experiment runner for the exciton-pimc engine.
//!
//! A run reads a TOML config, samples every requested temperature with a
//! pool of independent chains, and writes `summary.json`, `batches.csv`,
//! `density.csv` and `density.gp`. See `docs/` for the formats.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod output;
pub mod reference;

pub use config::{load_config, parse_config, ConfigError, RunConfig};
pub use experiment::{run_experiment, sample_experiment, RunError, RunOptions, RunSummary};
pub use output::write_outputs;
