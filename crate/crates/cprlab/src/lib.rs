//! Experiment harness for CPR: config parsing, synthetic data, the training
//! loop with JSONL metrics, sweeps, plot data and oracle reports.

pub mod config;
pub mod data;
pub mod error;
pub mod oracle;
pub mod plotdata;
pub mod sweep;
pub mod train;

pub use config::{config_load, RunConfig};
pub use data::{data_generate, Dataset};
pub use error::{HarnessError, Result};
pub use plotdata::emit_plotdata;
pub use sweep::{sweep_run, Grid};
pub use train::{train_run, MetricsRecord, Trainer};
