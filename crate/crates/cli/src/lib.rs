//! Batch driver for stability analyses: configuration, the analysis
//! pipeline, and report files.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{load_config, preset_text, RunConfig};
pub use error::{exit, CliError};
pub use pipeline::RunOptions;
pub use report::RunReport;
