//! Experiment configuration, pipelines and reports behind the `fedyolo` binary.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, ExperimentConfig};
pub use pipeline::{SchemaError, Summary, SUMMARY_KEYS};
