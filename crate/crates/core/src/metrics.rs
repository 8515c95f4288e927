//! Binary-relevance ranking metrics.

use alloc::collections::BTreeSet;
use alloc::string::String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("relevant set is empty")]
    EmptyRelevant,
}

fn considered<T>(ranked: &[T], k: Option<usize>) -> &[T] {
    match k {
        Some(k) if k < ranked.len() => &ranked[..k],
        _ => ranked,
    }
}

fn normalizer(relevant: usize, k: Option<usize>) -> usize {
    k.map_or(relevant, |k| relevant.min(k))
}

/// Average precision over the top `k` (whole list when `None`), normalized
/// by `min(|relevant|, k)`.
pub fn average_precision<T: AsRef<str>>(
    ranked: &[T],
    relevant: &BTreeSet<String>,
    k: Option<usize>,
) -> Result<f64, MetricError> {
    if relevant.is_empty() {
        return Err(MetricError::EmptyRelevant);
    }
    let denom = normalizer(relevant.len(), k);
    if denom == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in considered(ranked, k).iter().enumerate() {
        if relevant.contains(item.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / denom as f64)
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / libm::log2(rank as f64 + 1.0)
}

/// NDCG with binary gains over the top `k`.
pub fn ndcg<T: AsRef<str>>(ranked: &[T], relevant: &BTreeSet<String>, k: Option<usize>) -> Result<f64, MetricError> {
    if relevant.is_empty() {
        return Err(MetricError::EmptyRelevant);
    }
    let dcg: f64 = considered(ranked, k)
        .iter()
        .enumerate()
        .filter(|(_, item)| relevant.contains(item.as_ref()))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=normalizer(relevant.len(), k)).map(discount).sum();
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / ideal)
}
