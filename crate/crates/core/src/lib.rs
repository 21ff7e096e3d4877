//! Ranking distance calibration for few-shot episodes.
//!
//! Given pre-computed embeddings, each C-way K-shot episode is treated as a
//! small retrieval problem: every item probes the rest of the episode, its
//! k-reciprocal neighborhood is discovered and encoded, and the resulting
//! Jaccard distances are blended with the plain Euclidean ones. The same
//! calibration can run in a tanh-kernel subspace, and can serve as the target
//! of a KL fine-tuning loop over a linear adapter.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below pin the common double-precision case.
//!
//! # Modules
//!
//! - [`store`]: loading, validating and saving labelled embeddings
//! - [`episode`]: seeded episode sampling
//! - [`metric`]: distance matrices and the nearest-prototype classifier
//! - [`rerank`]: k-reciprocal expansion, Jaccard distance and calibration
//! - [`subspace`]: the tanh feature-kernel projection
//! - [`finetune`]: adapter fine-tuning against the calibrated target
//! - [`harness`]: batch evaluation, synthetic data and report output

pub mod episode;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod metric;
pub mod rerank;
pub mod scalar;
pub mod store;
pub mod subspace;

pub use episode::{sample_episode, Episode};
pub use error::{Error, Result};
pub use finetune::{Adapter, AttentionMask, FineTuneResult, SoftDistribution};
pub use metric::{DistanceKind, DistanceMatrix, Prototypes};
pub use rerank::{
    CalibrationConfig, EncodingVectors, ExpandedSets, KnnLists, LossKind, OptimizerKind, SoftenSign,
};
pub use scalar::Scalar;
pub use store::{EmbeddingSet, Format};
pub use subspace::SubspaceProjection;

pub type EmbeddingSet64 = EmbeddingSet<f64>;
pub type EmbeddingSet32 = EmbeddingSet<f32>;
pub type DistanceMatrix64 = DistanceMatrix<f64>;
pub type DistanceMatrix32 = DistanceMatrix<f32>;
pub type Prototypes64 = Prototypes<f64>;
pub type EncodingVectors64 = EncodingVectors<f64>;
pub type SubspaceProjection64 = SubspaceProjection<f64>;
pub type Adapter64 = Adapter<f64>;
pub type AttentionMask64 = AttentionMask<f64>;
pub type SoftDistribution64 = SoftDistribution<f64>;
