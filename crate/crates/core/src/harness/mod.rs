//! Configuration, datasets, experiment execution and output files.

pub mod config;
pub mod curves;
pub mod dataset;
pub mod experiment;
pub mod offline;
pub mod runlog;

pub use config::ExperimentConfig;
pub use curves::emit_curves;
pub use dataset::{load_dataset, Dataset, Record};
pub use experiment::{run_experiment, summarize, CommitteeSource, ExperimentOutput, SummaryRow};
pub use runlog::{RunLog, LOG_FORMAT};
