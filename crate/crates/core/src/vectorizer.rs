//! Article and user vectors built from word embeddings.
//!
//! An article vector is the idf-weighted sum of its tokens' embeddings scaled
//! to unit length. A user vector is the normalized sum of the vectors of the
//! articles in the user's recent click history.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::vector::{add_scaled, normalize};
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorizerError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("embedding dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("token {token:?} has {got} components, expected {expected}")]
    DimensionMismatch {
        token: String,
        expected: usize,
        got: usize,
    },
    #[error("idf value for {0:?} is negative or not finite")]
    InvalidIdf(String),
}

/// Word token → dense vector of a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, VectorizerError> {
        if dim < 2 {
            return Err(VectorizerError::DimensionTooSmall(dim));
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<(), VectorizerError> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(VectorizerError::DimensionMismatch {
                token,
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.entries.insert(token, vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Smoothed inverse document frequencies: `ln((1 + n) / (1 + df)) + 1`.
///
/// Words never seen in the corpus are treated as `df = 0`, so every lookup is
/// strictly positive for a table built by [`build_idf`].
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    doc_count: u64,
    entries: BTreeMap<String, f64>,
}

impl IdfTable {
    /// Rebuilds a table from stored values (e.g. a serialized idf file).
    pub fn from_entries(
        doc_count: u64,
        entries: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Self, VectorizerError> {
        let mut map = BTreeMap::new();
        for (token, value) in entries {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(VectorizerError::InvalidIdf(token));
            }
            map.insert(token, value);
        }
        Ok(Self {
            doc_count,
            entries: map,
        })
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn idf(&self, token: &str) -> f64 {
        match self.entries.get(token) {
            Some(v) => *v,
            None => smoothed_idf(self.doc_count, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Returns a copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            doc_count: self.doc_count,
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
        }
    }
}

fn smoothed_idf(doc_count: u64, df: u64) -> f64 {
    libm::log((1.0 + doc_count as f64) / (1.0 + df as f64)) + 1.0
}

/// Computes document frequencies over `corpus`, one token list per document.
pub fn build_idf<D, S>(corpus: impl IntoIterator<Item = D>) -> Result<IdfTable, VectorizerError>
where
    D: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut doc_count = 0u64;
    let mut df: BTreeMap<String, u64> = BTreeMap::new();
    for doc in corpus {
        doc_count += 1;
        let distinct: BTreeSet<String> = doc.into_iter().map(|t| String::from(t.as_ref())).collect();
        for token in distinct {
            *df.entry(token).or_insert(0) += 1;
        }
    }
    if doc_count == 0 {
        return Err(VectorizerError::EmptyCorpus);
    }
    let entries = df
        .into_iter()
        .map(|(token, n)| (token, smoothed_idf(doc_count, n)))
        .collect();
    Ok(IdfTable { doc_count, entries })
}

/// How repeated tokens in one article are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenWeighting {
    /// Every occurrence contributes.
    #[default]
    PerOccurrence,
    /// Duplicates collapse to one contribution.
    Distinct,
}

/// Unit-norm idf-weighted average of the embeddings of `tokens`.
///
/// Tokens without an embedding, or with a non-positive idf, are skipped.
/// Returns `None` when nothing contributes or the weighted sum vanishes.
pub fn article_vector<S: AsRef<str>>(
    tokens: &[S],
    embeddings: &EmbeddingTable,
    idf: &IdfTable,
    weighting: TokenWeighting,
) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; embeddings.dim()];
    let mut contributed = false;
    let mut seen = BTreeSet::new();
    for token in tokens {
        let token = token.as_ref();
        if weighting == TokenWeighting::Distinct && !seen.insert(token) {
            continue;
        }
        let Some(embedding) = embeddings.get(token) else {
            continue;
        };
        let weight = idf.idf(token);
        if weight > 0.0 {
            add_scaled(&mut acc, embedding, weight);
            contributed = true;
        }
    }
    if !contributed {
        return None;
    }
    normalize(acc)
}

/// Normalized sum of unit article vectors.
pub fn user_vector<'a>(history_vectors: impl IntoIterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut iter = history_vectors.into_iter();
    let first = iter.next()?;
    let mut acc = first.to_vec();
    for v in iter {
        add_scaled(&mut acc, v, 1.0);
    }
    normalize(acc)
}

/// A news article: id, publication time, tokens and (optionally) its vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticleRecord {
    pub article_id: String,
    pub published_at: Timestamp,
    pub tokens: Vec<String>,
    pub vector: Option<Vec<f64>>,
}

impl ArticleRecord {
    pub fn new(article_id: impl Into<String>, published_at: Timestamp, tokens: Vec<String>) -> Self {
        Self {
            article_id: article_id.into(),
            published_at,
            tokens,
            vector: None,
        }
    }

    /// Fills `vector` from the article's tokens.
    pub fn vectorize(&mut self, embeddings: &EmbeddingTable, idf: &IdfTable, weighting: TokenWeighting) {
        self.vector = article_vector(&self.tokens, embeddings, idf, weighting);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::is_unit;
    use alloc::string::ToString;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(entries[0].1.len()).unwrap();
        for (k, v) in entries {
            t.insert(*k, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn idf_single_document() {
        let idf = build_idf([vec!["x"]]).unwrap();
        assert!(close(idf.idf("x"), 1.0, 1e-12));
    }

    #[test]
    fn idf_rare_and_unseen_words() {
        let idf = build_idf([vec!["y", "z"], vec!["z"], vec!["z", "z"]]).unwrap();
        // ln(4/2) + 1
        assert!(close(idf.idf("y"), 2.0f64.ln() + 1.0, 1e-12));
        assert!(close(idf.idf("y"), 1.6931, 1e-4));
        // ln(4/1) + 1
        assert!(close(idf.idf("never"), 2.3863, 1e-4));
        assert!(close(idf.idf("z"), 1.0, 1e-12));
    }

    #[test]
    fn idf_empty_corpus() {
        let empty: [Vec<&str>; 0] = [];
        assert_eq!(build_idf(empty), Err(VectorizerError::EmptyCorpus));
    }

    #[test]
    fn embedding_dimension_checks() {
        assert_eq!(EmbeddingTable::new(1), Err(VectorizerError::DimensionTooSmall(1)));
        let mut t = EmbeddingTable::new(2).unwrap();
        assert!(t.insert("a", vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn single_token_article_is_its_embedding() {
        let emb = table(&[("w", &[0.6, 0.8])]);
        let idf = IdfTable::from_entries(5, [("w".to_string(), 3.7)]).unwrap();
        let v = article_vector(&["w"], &emb, &idf, TokenWeighting::PerOccurrence).unwrap();
        assert!(close(v[0], 0.6, 1e-12) && close(v[1], 0.8, 1e-12));
    }

    #[test]
    fn weighted_two_token_article() {
        let emb = table(&[("p", &[1.0, 0.0]), ("q", &[0.0, 1.0])]);
        let idf = IdfTable::from_entries(3, [("p".to_string(), 1.0), ("q".to_string(), 3.0)]).unwrap();
        let v = article_vector(&["p", "q"], &emb, &idf, TokenWeighting::PerOccurrence).unwrap();
        assert!(close(v[0], 0.31623, 1e-5));
        assert!(close(v[1], 0.94868, 1e-5));
    }

    #[test]
    fn repeated_tokens_by_weighting_mode() {
        let emb = table(&[("p", &[1.0, 0.0]), ("q", &[0.0, 1.0])]);
        let idf = IdfTable::from_entries(3, [("p".to_string(), 1.0), ("q".to_string(), 1.0)]).unwrap();
        let per = article_vector(&["p", "p", "q"], &emb, &idf, TokenWeighting::PerOccurrence).unwrap();
        let set = article_vector(&["p", "p", "q"], &emb, &idf, TokenWeighting::Distinct).unwrap();
        assert!(close(per[0], 2.0 / 5.0f64.sqrt(), 1e-12));
        assert!(close(set[0], set[1], 1e-12));
    }

    #[test]
    fn unknown_tokens_give_no_vector() {
        let emb = table(&[("p", &[1.0, 0.0])]);
        let idf = build_idf([vec!["p"]]).unwrap();
        assert!(article_vector(&["a", "b"], &emb, &idf, TokenWeighting::PerOccurrence).is_none());
        let none: [&str; 0] = [];
        assert!(article_vector(&none, &emb, &idf, TokenWeighting::PerOccurrence).is_none());
    }

    #[test]
    fn zero_idf_tokens_are_skipped() {
        let emb = table(&[("p", &[1.0, 0.0])]);
        let idf = IdfTable::from_entries(3, [("p".to_string(), 0.0)]).unwrap();
        assert!(article_vector(&["p"], &emb, &idf, TokenWeighting::PerOccurrence).is_none());
    }

    #[test]
    fn user_vector_examples() {
        let v = user_vector([&[0.6, 0.8][..]]).unwrap();
        assert!(close(v[0], 0.6, 1e-12) && close(v[1], 0.8, 1e-12));
        let v = user_vector([&[1.0, 0.0][..], &[0.0, 1.0][..]]).unwrap();
        assert!(close(v[0], 0.70711, 1e-5) && close(v[1], 0.70711, 1e-5));
        assert!(is_unit(&v, 1e-12));
        assert!(user_vector([&[1.0, 0.0][..], &[-1.0, 0.0][..]]).is_none());
        assert!(user_vector(core::iter::empty()).is_none());
    }
}
