//! Representational difference explanations.
//!
//! Given two embedding matrices over the same items, find small item sets that
//! one representation groups tightly and the other does not, and score them.
//!
//! The pipeline for one direction (source vs. reference):
//!
//! 1. [`geometry::pairwise_euclidean`] and a normalization ([`geometry::rank_normalize`] by default)
//! 2. [`difference::locally_biased_diff`] then [`difference::affinity`]
//! 3. [`concepts::sample_explanations`] (spectral clustering + KNA) or [`concepts::pagerank_sample`]
//! 4. [`metrics::bsr`] and the judge-embedding metrics
//!
//! [`pipeline`] wires these together and produces a [`report::ComparisonReport`].

// Range checks are written `!(x > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod baselines;
pub mod concepts;
pub mod difference;
pub mod error;
pub mod geometry;
pub mod hungarian;
pub mod kmeans;
mod linalg;
pub mod metrics;
pub mod npy;
mod par;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{Error, NpyErrorKind, Result};
pub use geometry::{EmbeddingMatrix, NormKind};
pub use linalg::Pca;
pub use par::is_parallel;

/// Crate version recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
