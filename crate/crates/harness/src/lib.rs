//! Experiment harness for the cofiba bandit library: configuration files,
//! grid search, multi-seed runs on synthetic worlds or replayed logs, and
//! CSV/JSON export of curves and cluster histograms.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod export;

pub use config::{ExperimentConfig, Mode};
pub use error::{HarnessError, Result};
pub use experiment::{grid_search, run_experiment, Curve, Environment, RunReport};
