//! Experiment runner for qnbo: TOML experiment files in, CSV traces and
//! summaries out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod error;
pub mod output;
pub mod runner;
pub mod selftest;
pub mod summary;

pub use config::{ExperimentSpec, Method, ProblemSpec, SolverSpec};
pub use error::{BenchError, Result};
pub use runner::{run_all, run_experiment, run_repeat, ExperimentReport, RepeatResult, RunOptions};
pub use summary::Summary;
