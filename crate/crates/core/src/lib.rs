//! Part-aligned person re-identification with spatial-channel parallelism.
//!
//! A backbone feature map feeds two branches: stripe pooling gives one
//! local feature per horizontal part, and a 1×1 expansion followed by global
//! average pooling gives a global feature whose channel blocks are trained
//! to match the local parts. Only the global feature is used at retrieval.

pub mod checkpoint;
pub mod data;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{
    distance_matrix, extract_features, pair_distance, DistanceMode, Exclusion, FeatureGallery,
    RankingReport,
};
pub use losses::{LossBreakdown, LossWeights};
pub use model::{build_model, Model, ModelConfig};
pub use training::{lr_at, TrainConfig, Trainer};
