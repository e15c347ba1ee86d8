//! Pool-based active learning with committees of few-shot annotators.
//!
//! Each iteration picks a batch from the unlabeled pool with an acquisition
//! function, has it labeled (gold labels, the previous student, or a committee
//! of annotator workers whose votes are aggregated), optionally filters the
//! accumulated training set by annotation entropy, and retrains a hashed
//! n-gram softmax classifier from scratch.

pub mod acquisition;
pub mod aggregation;
pub mod data_model;
pub mod error;
pub mod harness;
pub mod orchestrator;
pub mod quality;
pub mod student;
pub mod synthetic;
pub mod workers;

mod seeds;

pub use acquisition::{AcquisitionFunction, AcquisitionKind, Selection};
pub use aggregation::AggregationStrategy;
pub use data_model::{
    AggregatedLabel, Annotation, Example, LabelIndex, LabelSet, LabeledExample, Pool, SparseVector,
};
pub use error::{Error, Result};
pub use orchestrator::{IterationRecord, LoopConfig, LoopOutcome, Scheme};
pub use quality::{ItemSource, Tau, TrainingItem};
pub use student::{FeaturizerConfig, LossMode, Metric, StudentModel, TrainConfig};
pub use workers::{Committee, SimulatedWorkerSpec, Worker, WorkerEndpoint, WorkerProfile};
