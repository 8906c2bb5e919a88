//! Experiment runner: configuration, training, evaluation and reports.

mod commands;
mod config;
mod report;

pub use commands::{
    build_env, build_library, build_trainer, run_clear, run_compare, run_eval, run_gen_profiles, run_train, split_days,
    CompareReport, DaySplit, EvalReport, EvalSource, TrainOutcome, CHECKPOINT_FILE, CURVE_FILE,
};
pub use config::{EnvSection, ExperimentConfig, MarketConfig, ProfileSource, Seeds};
pub use report::{MetricRow, METRIC_NAMES, PUBLISHED_EMERGENCY, PUBLISHED_PROFIT};

use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Marl(#[from] gridmarket_marl::MarlError),
    #[error(transparent)]
    Env(#[from] gridmarket_core::env::EnvError),
    #[error(transparent)]
    Nn(#[from] gridmarket_nn::NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}
