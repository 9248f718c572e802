//! Experiment driver: data loading, baselines, the train-to-encrypted
//! pipeline and its metrics report.

pub mod config;
pub mod data;
pub mod error;
pub mod logistic;
pub mod metrics;
pub mod pipeline;
pub mod synthetic;

pub use config::ExperimentConfig;
pub use error::BenchError;
pub use pipeline::{run_pipeline, MetricsReport};
