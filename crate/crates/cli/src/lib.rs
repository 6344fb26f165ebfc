//! Experiment front-end for `gcdlab`: TOML configs, sweep grids, metrics
//! CSVs and SVG reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod embeddings;
pub mod experiment;
pub mod report;

pub use config::{parse_config, ExperimentConfig};
pub use experiment::run_experiment;
pub use report::emit_report;
