//! Monte Carlo harness comparing sieve NPIV, cross-fitted boostIV and
//! post-boostIV on simulated instrumental-variable designs.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{parse_config, ExperimentConfig};
pub use experiment::{run_experiment, Estimator, ExperimentReport, Row};
pub use report::{aggregate, write_report, Aggregate};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report error: {0}")]
    Report(String),

    #[error("runtime error: {0}")]
    Runtime(String),
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/bench.md")]
mod guide {}
