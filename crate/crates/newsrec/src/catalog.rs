use std::collections::HashMap;

use newsrec_core::vectorizer::TokenWeighting;
use newsrec_core::{ArticleRecord, ArticleVectors, EmbeddingTable, IdfTable, Timestamp};

use crate::events::ArticleLine;

/// Vectorized articles with id lookup, in publication order.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    articles: Vec<ArticleRecord>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(mut articles: Vec<ArticleRecord>) -> Self {
        articles.sort_by(|a, b| a.published_at.cmp(&b.published_at).then_with(|| a.article_id.cmp(&b.article_id)));
        articles.dedup_by(|a, b| a.article_id == b.article_id);
        let index = articles.iter().enumerate().map(|(i, a)| (a.article_id.clone(), i)).collect();
        Self { articles, index }
    }

    pub fn from_lines(lines: &[ArticleLine], emb: &EmbeddingTable, idf: &IdfTable, weighting: TokenWeighting) -> Self {
        let records = lines
            .iter()
            .map(|l| {
                let mut r = ArticleRecord::new(l.article_id.clone(), l.published_at, l.tokens.clone());
                r.vectorize(emb, idf, weighting);
                r
            })
            .collect();
        Self::new(records)
    }

    pub fn get(&self, article_id: &str) -> Option<&ArticleRecord> {
        self.index.get(article_id).map(|&i| &self.articles[i])
    }

    pub fn articles(&self) -> &[ArticleRecord] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    /// Articles with `from < published_at <= to`.
    pub fn published_in(&self, from: Timestamp, to: Timestamp) -> &[ArticleRecord] {
        let lo = self.articles.partition_point(|a| a.published_at <= from);
        let hi = self.articles.partition_point(|a| a.published_at <= to);
        &self.articles[lo..hi.max(lo)]
    }
}

impl ArticleVectors for Catalog {
    fn article_vector(&self, article_id: &str) -> Option<&[f64]> {
        self.get(article_id)?.vector.as_deref()
    }

    fn contains(&self, article_id: &str) -> bool {
        self.index.contains_key(article_id)
    }
}
