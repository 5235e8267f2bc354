//! Attribute propagation networks for zero-shot classification.
//!
//! Class attribute vectors are encoded by a mixture of experts, propagated
//! over a learned class graph with attention, and compared to image features
//! with a learned additive-attention metric. Training samples random
//! N-way-K-shot tasks over the seen classes.

pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod head;
pub mod linear;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use dataset::{generate_synthetic, load_dataset, save_dataset, Dataset, Splits, SyntheticConfig};
pub use error::{ApnetError, Result};
pub use eval::{evaluate_gzsl, evaluate_zsl, harmonic_mean, per_class_accuracy, EvalConfig, EvalReport, GraphScope, Setting};
pub use graph::{PropagationConfig, PropagationMode};
pub use head::HeadConfig;
pub use model::{ModelConfig, ModelParams};
pub use numerics::{DenseMatrix, SeededRng};
pub use trainer::{train, TrainConfig, TrainLog, TrainingMode, TrainingSetup};
