//! Cluster-based collaborative filtering for immediate news recommendation.
//!
//! The crate holds the algorithmic pieces only and needs nothing beyond
//! `alloc`: article and user vectors, user clustering (k-means++, MinHash,
//! NMF), windowed per-cluster CTR aggregation, time-decayed scoring and
//! top-M ranking, streaming profile updates, and offline ranking metrics.
//! File formats, stores, serving and data generation live in the `newsrec`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cluster;
pub mod ctr;
pub mod metrics;
pub mod profile;
pub mod rng;
pub mod scorer;
pub mod vector;
pub mod vectorizer;

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

pub use cluster::{Affiliation, ClusterError, ClusterModel, ClusterWeights, ModelBody, WeightParams};
pub use ctr::{Cell, CtrAggregator, CtrError, CtrMatrix, CtrTable, Horizon, Interaction, Smoothing};
pub use profile::{ArticleVectors, BehaviorEvent, EventKind, HistoryPolicy, UserProfile};
pub use metrics::{average_precision, ndcg, MetricError};
pub use scorer::{rank, DecayConfig, DecayMode, RankConfig, ScoreError, ScoreSignal, ScoredArticle};
pub use vectorizer::{ArticleRecord, EmbeddingTable, IdfTable, VectorizerError};
