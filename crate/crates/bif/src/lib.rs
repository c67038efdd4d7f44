//! File formats, synthetic data and experiment pipelines around `bif-core`.

pub mod config;
pub mod data;
pub mod experiment;
pub mod io;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, Trained};
pub use report::RunReport;
