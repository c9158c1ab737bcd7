//! Graph encoders for recommendation and node classification trained with
//! Laplacian-based contrastive objectives.

pub mod bounds;
pub mod data;
pub mod dense;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = dense::Matrix<f64>;
pub type SparseOperator64 = graph::SparseOperator<f64>;
pub type EmbeddingTable64 = encoder::EmbeddingTable<f64>;
pub type PropagationConfig64 = encoder::PropagationConfig<f64>;
pub type RankingModel = training::GrModel<f64>;
