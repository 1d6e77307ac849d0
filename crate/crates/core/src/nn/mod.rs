//! Reverse-mode layers, embedding modules and the MLP model.

pub mod embedding;
pub mod layer;
pub mod loss;
pub mod model;

pub use embedding::{EmbeddingBase, EmbeddingKind, EmbeddingSpec, LinearStages, ModelName};
pub use layer::{Layer, Param};
pub use loss::Loss;
pub use model::{build_model, MlpConfig, Model};
