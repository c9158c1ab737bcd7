//! Optimization loops for recommendation and contrastive pre-training.

pub mod adam;
pub mod classifier;
pub mod config;
pub mod gcl;
pub mod gr;

pub use adam::{adam_step, AdamParams, OptimizerState};
pub use classifier::{ClassifierParams, LinearClassifier};
pub use config::{LossKind, NegativeRefresh, NormalizeMode, TrainConfig};
pub use gcl::{
    evaluate_node_classification, node_split, train_gcl, GclOutcome, NodeClassificationReport,
};
pub use gr::{
    batch_loss, interaction_operator, sample_batch, train_gr, train_gr_with, EpochRecord, GrModel,
    GrOutcome,
};
