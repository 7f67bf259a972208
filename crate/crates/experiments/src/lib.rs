//! Studies built on the `otpdag` core: data generators, model bindings, metrics, the run
//! driver and report files.

pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind, Sizes};
pub use error::{ExperimentError, Result};
pub use report::{Manifest, Metric, ReportRow};
pub use runner::{run, run_to_dir, RunOutput};
