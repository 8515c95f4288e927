//! User clustering: k-means++ over user vectors, plus MinHash and NMF
//! baselines over click sets, and the per-user cluster weights used when
//! summing cluster CTRs into a score.

mod kmeans;
mod minhash;
mod nmf;

pub use kmeans::{kmeans_fit, KMeansFit, KMeansParams};
pub use minhash::{minhash_fit, MinHashFit, MinHashKey, MinHashParams, MinHasher};
pub use nmf::{nmf_fit, Factorization, NmfFit, NmfParams, SparseCounts};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::vector::{distance, squared_distance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("insufficient users: {have} users for {k} clusters")]
    InsufficientUsers { have: usize, k: usize },
    #[error("insufficient articles: {have} articles for {k} clusters")]
    InsufficientArticles { have: usize, k: usize },
    #[error("vector for user {user:?} has {got} components, expected {expected}")]
    DimensionMismatch { user: String, expected: usize, got: usize },
    #[error("user {0:?} has no clicks")]
    EmptyRow(String),
    #[error("unassignable: {0}")]
    Unassignable(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algorithm {
    KMeans,
    MinHash,
    Nmf,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::MinHash => "minhash",
            Algorithm::Nmf => "nmf",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "kmeans" => Some(Algorithm::KMeans),
            "minhash" => Some(Algorithm::MinHash),
            "nmf" => Some(Algorithm::Nmf),
            _ => None,
        }
    }
}

/// Algorithm-specific state of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    KMeans {
        centroids: Vec<Vec<f64>>,
    },
    MinHash {
        hasher: MinHasher,
        /// Cluster `i` is the users whose key equals `keys[i]`; sorted.
        keys: Vec<MinHashKey>,
    },
    Nmf {
        /// `K × articles` basis `H`, one row per cluster.
        basis: Vec<Vec<f64>>,
        /// Column labels of `basis`.
        articles: Vec<String>,
        /// Training users' `W` rows normalized to sum 1.
        memberships: BTreeMap<String, Vec<f64>>,
    },
}

/// An immutable fitted clustering of users.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub version: u64,
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub body: ModelBody,
}

/// The inputs a model may need to place a user.
#[derive(Debug, Clone, Copy, Default)]
pub struct UserSignal<'a> {
    pub vector: Option<&'a [f64]>,
    /// Clicked article ids; repeats count for NMF, collapse for MinHash.
    pub clicks: &'a [String],
}

/// Result of placing a user under a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Affiliation {
    Index(usize),
    Key { key: MinHashKey, cluster: Option<usize> },
    Soft { cluster: usize, weights: Vec<f64> },
}

impl Affiliation {
    pub fn cluster(&self) -> Option<usize> {
        match self {
            Affiliation::Index(i) => Some(*i),
            Affiliation::Key { cluster, .. } => *cluster,
            Affiliation::Soft { cluster, .. } => Some(*cluster),
        }
    }
}

/// Non-negative per-cluster weights of one user, tied to a model version.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterWeights {
    pub model_version: u64,
    pub weights: Vec<(usize, f64)>,
}

impl ClusterWeights {
    /// Expands to a length-`k` dense vector.
    pub fn dense(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k];
        for &(i, w) in &self.weights {
            if i < k {
                out[i] += w;
            }
        }
        out
    }
}

/// Weight function settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParams {
    pub exponent: f64,
    pub eps: f64,
    /// NMF: use the normalized `W` row instead of weight 1 on the argmax cluster.
    pub nmf_soft: bool,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            exponent: 10.0,
            eps: 1e-6,
            nmf_soft: false,
        }
    }
}

/// `1 / max(‖u − c‖, eps)^exponent` for every centroid.
pub fn kmeans_weights(user: &[f64], centroids: &[Vec<f64>], exponent: f64, eps: f64) -> Vec<f64> {
    centroids
        .iter()
        .map(|c| {
            let d = distance(user, c).max(eps);
            1.0 / libm::pow(d, exponent)
        })
        .collect()
}

/// Index of the nearest centroid by Euclidean distance; ties go to the lowest index.
pub fn nearest_centroid(user: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(user, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

impl ClusterModel {
    pub fn algorithm(&self) -> Algorithm {
        match self.body {
            ModelBody::KMeans { .. } => Algorithm::KMeans,
            ModelBody::MinHash { .. } => Algorithm::MinHash,
            ModelBody::Nmf { .. } => Algorithm::Nmf,
        }
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn centroids(&self) -> Option<&[Vec<f64>]> {
        match &self.body {
            ModelBody::KMeans { centroids } => Some(centroids),
            _ => None,
        }
    }

    /// Places a possibly unseen user under this model.
    pub fn assign(&self, signal: UserSignal<'_>) -> Result<Affiliation, ClusterError> {
        match &self.body {
            ModelBody::KMeans { centroids } => {
                let v = signal.vector.ok_or(ClusterError::Unassignable("user has no vector"))?;
                Ok(Affiliation::Index(nearest_centroid(v, centroids)))
            }
            ModelBody::MinHash { hasher, keys } => {
                let key = hasher
                    .key(signal.clicks.iter().map(String::as_str))
                    .ok_or(ClusterError::Unassignable("user has no clicks"))?;
                let cluster = keys.binary_search(&key).ok();
                Ok(Affiliation::Key { key, cluster })
            }
            ModelBody::Nmf { basis, articles, .. } => {
                let weights = nmf::project_row(basis, articles, signal.clicks)
                    .ok_or(ClusterError::Unassignable("user has no clicks on modeled articles"))?;
                let cluster = argmax(&weights);
                Ok(Affiliation::Soft { cluster, weights })
            }
        }
    }

    /// Cluster weights for `user_id`, preferring the fitted assignment for
    /// baseline models and the live vector for k-means.
    pub fn weights_for(
        &self,
        user_id: &str,
        signal: UserSignal<'_>,
        params: &WeightParams,
    ) -> Result<ClusterWeights, ClusterError> {
        let weights = match &self.body {
            ModelBody::KMeans { centroids } => {
                let v = signal.vector.ok_or(ClusterError::Unassignable("user has no vector"))?;
                kmeans_weights(v, centroids, params.exponent, params.eps)
                    .into_iter()
                    .enumerate()
                    .collect()
            }
            ModelBody::MinHash { .. } => {
                let cluster = match self.assignments.get(user_id) {
                    Some(c) => *c,
                    None => self
                        .assign(signal)?
                        .cluster()
                        .ok_or(ClusterError::Unassignable("no cluster shares the user's key"))?,
                };
                vec![(cluster, 1.0)]
            }
            ModelBody::Nmf { memberships, .. } => {
                let soft = match memberships.get(user_id) {
                    Some(w) => w.clone(),
                    None => match self.assign(signal)? {
                        Affiliation::Soft { weights, .. } => weights,
                        _ => unreachable!("nmf assignment is soft"),
                    },
                };
                if params.nmf_soft {
                    soft.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect()
                } else {
                    vec![(argmax(&soft), 1.0)]
                }
            }
        };
        Ok(ClusterWeights {
            model_version: self.version,
            weights,
        })
    }

    /// Cluster index for CTR attribution: the fitted assignment when the
    /// user was part of the fit, otherwise a fresh placement.
    pub fn cluster_of(&self, user_id: &str, signal: UserSignal<'_>) -> Option<usize> {
        if let Some(c) = self.assignments.get(user_id) {
            return Some(*c);
        }
        self.assign(signal).ok().and_then(|a| a.cluster())
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
