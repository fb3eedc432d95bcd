//! Command-line pipeline around `fsu_demand`: survey ingestion, uniform-price
//! datasets, LA-AIDS fits and the distribution, inequality, elasticity and
//! measurement-error comparisons, written as plain CSV/JSON into one output tree.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::Context;
pub use config::{MeasurementConfig, Overrides, PipelineConfig};
pub use error::{CliError, ErrorReport};
