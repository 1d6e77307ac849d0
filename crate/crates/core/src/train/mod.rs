//! Preprocessing, optimization, the training loop and hyperparameter search.

pub mod optim;
pub mod preprocess;
pub mod search;
pub mod trainer;

pub use optim::AdamW;
pub use preprocess::{PreprocessingKind, Preprocessor, QuantileTransform, Standardizer, TargetScaler};
pub use search::{random_search, Distribution, SearchSpace};
pub use trainer::{train, TrainConfig, TrainData, TrainReport};
