//! The student classifier: hashed n-gram features, a linear softmax model
//! trained from scratch, evaluation metrics and model persistence.

mod featurizer;
mod metrics;
mod model;
mod persist;

pub use featurizer::{Featurizer, FeaturizerConfig, DEFAULT_DIMENSION};
pub use metrics::{accuracy, evaluate, matthews, score, ConfusionMatrix, Metric};
pub use model::{gradient, objective, train_student, Gradient, LossMode, StudentModel, TrainConfig};
pub use persist::{load_model, read_model, save_model, write_model, FORMAT_TAG};
