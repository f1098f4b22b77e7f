//! Matrix-factorization recommender trained with nested ("matryoshka")
//! embedding prefixes: BPR and MRL losses, DNS and MNS negative samplers,
//! sparse Adam training and full-catalog Recall/NDCG evaluation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F32`/`*F64` aliases below name the concrete instantiations.

pub mod data;
pub mod digest;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod sampling;
pub mod scalar;
pub mod synthetic;
pub mod theorem;
pub mod trainer;
pub mod types;

pub use data::{InteractionDataset, InteractionFormat, Partition, SplitConfig, ValidationMode};
pub use embeddings::{EmbeddingTable, Model};
pub use error::{Error, Result};
pub use evaluation::{evaluate, evaluate_cuts, evaluate_truncated, MetricReport};
pub use losses::{bpr_loss, mrl_loss, mrl_mns_loss, GradientMap, LossBatchResult, LossKind};
pub use sampling::{SamplerConfig, SamplingStrategy};
pub use scalar::Scalar;
pub use synthetic::{generate_synthetic, GroundTruthHierarchy, SyntheticSpec};
pub use theorem::{verify_theorem, TheoremReport};
pub use trainer::{train, train_with, TrainConfig, TrainOutcome, Variant};
pub use types::{DimensionSchedule, ItemId, TrainingTuple, UserId};

pub type EmbeddingTableF32 = EmbeddingTable<f32>;
pub type EmbeddingTableF64 = EmbeddingTable<f64>;
pub type ModelF32 = Model<f32>;
pub type ModelF64 = Model<f64>;
pub type GradientMapF32 = GradientMap<f32>;
pub type GradientMapF64 = GradientMap<f64>;
pub type TrainOutcomeF32 = TrainOutcome<f32>;
pub type TrainOutcomeF64 = TrainOutcome<f64>;
