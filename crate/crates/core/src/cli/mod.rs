//! JSON-configured experiment runner.
//!
//! A config lists experiments, each a step law × test function × n-schedule
//! run through one verifier op. A run writes, into the output directory:
//!
//! - `summary.csv`: one row per (experiment, n)
//! - `<id>.json`: the full verifier reports
//! - `<id>_rate.csv`: `(log n, log value)` for experiments with a rate fit
//! - `run_report.json`: statuses, artifacts, timings and the config hash
//!
//! Everything but `run_report.json` is byte-reproducible for a given config
//! and seed.

mod config;
mod run;

pub use config::{
    parse_config, validate_config, ConfigError, Expect, ExperimentConfig, ExperimentSpec,
    NSchedule, Op, Tolerances,
};
pub use run::{
    config_hash, run_experiment, run_single, status_ok, write_atomic, ExperimentResult,
    ExperimentStatus, RunOptions, RunReport, SummaryRow,
};
