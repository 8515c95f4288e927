use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use super::{ClusterError, ClusterModel, ModelBody};
use crate::rng::{fnv1a, mix64};

/// Concatenated leading min-hash values that name a cluster.
pub type MinHashKey = Vec<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinHashParams {
    pub num_hashes: usize,
    pub key_len: usize,
    pub seed: u64,
}

impl Default for MinHashParams {
    fn default() -> Self {
        Self {
            num_hashes: 8,
            key_len: 2,
            seed: 0,
        }
    }
}

/// Seeded family of hash functions over article ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinHasher {
    pub num_hashes: usize,
    pub key_len: usize,
    pub seed: u64,
}

impl MinHasher {
    pub fn new(params: &MinHashParams) -> Result<Self, ClusterError> {
        if params.num_hashes == 0 || params.key_len == 0 {
            return Err(ClusterError::InvalidParameter("num_hashes and key_len must be positive"));
        }
        if params.key_len > params.num_hashes {
            return Err(ClusterError::InvalidParameter("key_len must not exceed num_hashes"));
        }
        Ok(Self {
            num_hashes: params.num_hashes,
            key_len: params.key_len,
            seed: params.seed,
        })
    }

    #[inline]
    fn hash(&self, j: usize, item_hash: u64) -> u64 {
        let salt = mix64(self.seed ^ mix64(j as u64 + 1));
        mix64(item_hash ^ salt)
    }

    /// All `num_hashes` minimum values, or `None` for an empty set.
    pub fn signature<'a>(&self, items: impl IntoIterator<Item = &'a str>) -> Option<Vec<u64>> {
        let mut mins = alloc::vec![u64::MAX; self.num_hashes];
        let mut any = false;
        for item in items {
            any = true;
            let base = fnv1a(item);
            for (j, m) in mins.iter_mut().enumerate() {
                let h = self.hash(j, base);
                if h < *m {
                    *m = h;
                }
            }
        }
        any.then_some(mins)
    }

    pub fn key<'a>(&self, items: impl IntoIterator<Item = &'a str>) -> Option<MinHashKey> {
        let mut sig = self.signature(items)?;
        sig.truncate(self.key_len);
        Some(sig)
    }
}

#[derive(Debug, Clone)]
pub struct MinHashFit {
    pub model: ClusterModel,
    /// Users dropped because their click set was empty.
    pub skipped: Vec<String>,
}

/// Groups users whose click sets share the same min-hash key.
///
/// Cluster indices follow the sorted order of the distinct keys.
pub fn minhash_fit(
    click_sets: &BTreeMap<String, BTreeSet<String>>,
    params: &MinHashParams,
) -> Result<MinHashFit, ClusterError> {
    let hasher = MinHasher::new(params)?;
    let mut skipped = Vec::new();
    let mut user_keys = Vec::with_capacity(click_sets.len());
    for (user, set) in click_sets {
        match hasher.key(set.iter().map(String::as_str)) {
            Some(key) => user_keys.push((user.clone(), key)),
            None => skipped.push(user.clone()),
        }
    }
    let keys: Vec<MinHashKey> = user_keys
        .iter()
        .map(|(_, k)| k.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let assignments = user_keys
        .into_iter()
        .map(|(user, key)| {
            let idx = keys.binary_search(&key).expect("key collected above");
            (user, idx)
        })
        .collect();
    Ok(MinHashFit {
        model: ClusterModel {
            version: 0,
            k: keys.len(),
            assignments,
            body: ModelBody::MinHash { hasher, keys },
        },
        skipped,
    })
}
