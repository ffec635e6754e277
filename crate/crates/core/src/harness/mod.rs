//! Experiment orchestration: configuration, parameter selection, the
//! multi-trial runner and CSV/JSON output.

use std::path::PathBuf;

use thiserror::Error;

use crate::env::EnvError;
use crate::policy::PolicyError;

mod config;
mod params;
mod runner;

pub use config::{
    fig1_config, AutoTag, Budget, BudgetRule, EnvironmentConfig, ExperimentConfig, PolicyConfig,
    PolicyKind, Setting, Tunable,
};
pub use params::{select_save_params, select_woful_params, Branch, ParamChoice};
pub use runner::{
    run_experiment, simulate, simulate_with, validate_experiment, CellResult, Failure,
    HorizonAccounting, PolicySummary, RunOptions, RunSummary, SettingSummary, TraceRow, CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
