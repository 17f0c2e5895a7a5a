//! Batch pipeline around `ontram-core`: simulate, train, cross-validate,
//! evaluate and compare, driven by one TOML config.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use commands::{cmd_cv, cmd_evaluate, cmd_report, cmd_simulate, cmd_train, SimulateSummary};
pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
pub use report::EvaluationReport;
