//! Recommendation scores and top-M ranking.
//!
//! `score(u, a) = t(u, a) · Σ_i w(u, c_i) · CTR(U_ci, a)`, where `t` is a
//! freshness multiplier measured either from now (TDF) or from the user's
//! last access (UTDF).

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::cluster::{ClusterError, ClusterModel, ClusterWeights, UserSignal, WeightParams};
use crate::ctr::{CtrMatrix, CtrTable, Smoothing};
use crate::profile::UserProfile;
use crate::vector::dot;
use crate::vectorizer::ArticleRecord;
use crate::Timestamp;

/// One hour squared, in seconds².
pub const DEFAULT_SIGMA: f64 = 3600.0 * 3600.0;
pub const DEFAULT_T_TDF: i64 = 3600;
pub const DEFAULT_T_UTDF: i64 = 4 * 3600;

/// Decay factors never drop below this, so they stay strictly positive.
pub const MIN_DECAY: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("stale weights: weights from model {weights}, CTR snapshot from model {snapshot}")]
    StaleWeights { weights: u64, snapshot: u64 },
    #[error("cold user: {0}")]
    ColdUser(ClusterError),
    #[error("m must be at least 1")]
    InvalidListSize,
    #[error("model has {model} clusters but the CTR snapshot has {snapshot}")]
    ClusterCountMismatch { model: usize, snapshot: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayMode {
    /// `t ≡ 1`.
    #[default]
    None,
    Tdf,
    Utdf,
}

impl DecayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayMode::None => "none",
            DecayMode::Tdf => "tdf",
            DecayMode::Utdf => "utdf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(DecayMode::None),
            "tdf" => Some(DecayMode::Tdf),
            "utdf" => Some(DecayMode::Utdf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConfig {
    pub mode: DecayMode,
    /// Age (seconds) up to which no decay applies.
    pub threshold_seconds: i64,
    /// Scale in seconds²; must be positive.
    pub sigma: f64,
}

impl DecayConfig {
    pub fn none() -> Self {
        Self {
            mode: DecayMode::None,
            threshold_seconds: 0,
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn tdf() -> Self {
        Self {
            mode: DecayMode::Tdf,
            threshold_seconds: DEFAULT_T_TDF,
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn utdf() -> Self {
        Self {
            mode: DecayMode::Utdf,
            threshold_seconds: DEFAULT_T_UTDF,
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.sigma > 0.0 && self.sigma.is_finite() && self.threshold_seconds >= 0
    }
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self::none()
    }
}

/// 1 while `elapsed ≤ threshold`, then `exp(−(elapsed − threshold)² / 2σ)`.
///
/// The undamped branch covers fresh articles; older ones decay.
#[inline]
fn gaussian_tail(elapsed: i64, threshold: i64, sigma: f64) -> f64 {
    if elapsed <= threshold {
        return 1.0;
    }
    let over = (elapsed - threshold) as f64;
    libm::exp(-(over * over) / (2.0 * sigma)).max(MIN_DECAY)
}

/// Freshness relative to now. Future-dated articles count as fresh.
pub fn decay_tdf(now: Timestamp, published_at: Timestamp, cfg: &DecayConfig) -> f64 {
    gaussian_tail(now - published_at, cfg.threshold_seconds, cfg.sigma)
}

/// Freshness relative to the user's last access; users without one fall
/// back to [`decay_tdf`] with the same threshold and scale.
pub fn decay_utdf(
    last_access_at: Option<Timestamp>,
    published_at: Timestamp,
    now: Timestamp,
    cfg: &DecayConfig,
) -> f64 {
    match last_access_at {
        Some(t) => gaussian_tail(t - published_at, cfg.threshold_seconds, cfg.sigma),
        None => decay_tdf(now, published_at, cfg),
    }
}

pub fn decay_factor(
    cfg: &DecayConfig,
    now: Timestamp,
    last_access_at: Option<Timestamp>,
    published_at: Timestamp,
) -> f64 {
    match cfg.mode {
        DecayMode::None => 1.0,
        DecayMode::Tdf => decay_tdf(now, published_at, cfg),
        DecayMode::Utdf => decay_utdf(last_access_at, published_at, now, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakdown {
    pub decay_factor: f64,
    pub undamped_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredArticle {
    pub article_id: String,
    pub published_at: Timestamp,
    pub score: f64,
    pub breakdown: Option<Breakdown>,
}

/// Descending score, then newer first, then ascending id.
pub fn rank_order(a: &ScoredArticle, b: &ScoredArticle) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.published_at.cmp(&a.published_at))
        .then_with(|| a.article_id.cmp(&b.article_id))
}

fn check_version(weights: &ClusterWeights, table: &CtrTable) -> Result<(), ScoreError> {
    if weights.model_version != table.model_version {
        return Err(ScoreError::StaleWeights {
            weights: weights.model_version,
            snapshot: table.model_version,
        });
    }
    Ok(())
}

fn scored(article: &ArticleRecord, undamped: f64, decay: f64) -> ScoredArticle {
    ScoredArticle {
        article_id: article.article_id.clone(),
        published_at: article.published_at,
        score: decay * undamped,
        breakdown: Some(Breakdown {
            decay_factor: decay,
            undamped_score: undamped,
        }),
    }
}

/// Weighted sum of cluster CTRs, times `decay`.
pub fn score(
    weights: &ClusterWeights,
    table: &CtrTable,
    article: &ArticleRecord,
    decay: f64,
    smoothing: Smoothing,
) -> Result<ScoredArticle, ScoreError> {
    check_version(weights, table)?;
    let undamped = weights
        .weights
        .iter()
        .map(|&(i, w)| w * table.ctr(i, &article.article_id, smoothing))
        .sum();
    Ok(scored(article, undamped, decay))
}

/// Same as [`score`] with raw click counts in place of CTR.
pub fn score_clicks_variant(
    weights: &ClusterWeights,
    table: &CtrTable,
    article: &ArticleRecord,
    decay: f64,
) -> Result<ScoredArticle, ScoreError> {
    check_version(weights, table)?;
    let undamped = weights
        .weights
        .iter()
        .map(|&(i, w)| w * table.clicks(i, &article.article_id) as f64)
        .sum();
    Ok(scored(article, undamped, decay))
}

/// Inner product of user and article vectors.
pub fn score_content_baseline(user: &[f64], article: &[f64]) -> f64 {
    dot(user, article)
}

/// Which per-cluster statistic feeds the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum ScoreSignal {
    #[default]
    Ctr,
    Clicks,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankConfig {
    pub decay: DecayConfig,
    pub weights: WeightParams,
    pub signal: ScoreSignal,
    pub with_breakdown: bool,
}

/// Keeps the best `m` items under [`rank_order`], sorted.
pub fn top_m(mut items: Vec<ScoredArticle>, m: usize) -> Vec<ScoredArticle> {
    if m == 0 {
        items.clear();
        return items;
    }
    if items.len() > m {
        items.select_nth_unstable_by(m - 1, rank_order);
        items.truncate(m);
    }
    items.sort_by(rank_order);
    items
}

/// Where a candidate's CTR row lives in the matrix.
#[derive(Debug, Clone, Copy)]
pub enum RowLookup {
    /// Resolve each candidate by article id.
    ById,
    /// Candidate `i` is matrix row `i`.
    Aligned,
}

/// Scores `candidates` for dense `weights` and returns the top `m`.
///
/// Candidates absent from the matrix score as if every cell were empty.
#[allow(clippy::too_many_arguments)]
pub fn rank_with_weights(
    weights: &ClusterWeights,
    candidates: &[ArticleRecord],
    ctr: &CtrMatrix,
    lookup: RowLookup,
    cfg: &RankConfig,
    last_access_at: Option<Timestamp>,
    m: usize,
    now: Timestamp,
) -> Result<Vec<ScoredArticle>, ScoreError> {
    if m == 0 {
        return Err(ScoreError::InvalidListSize);
    }
    if weights.model_version != ctr.model_version {
        return Err(ScoreError::StaleWeights {
            weights: weights.model_version,
            snapshot: ctr.model_version,
        });
    }
    let dense = weights.dense(ctr.k);
    let absent = match cfg.signal {
        ScoreSignal::Ctr => ctr.empty_rate * dense.iter().sum::<f64>(),
        ScoreSignal::Clicks => 0.0,
    };
    // Zero weights add nothing, so baselines with one hard cluster skip the rest of the row.
    let active: Vec<(usize, f64)> = dense.iter().copied().enumerate().filter(|&(_, w)| w != 0.0).collect();
    let sparse_dot = |row: &[f64]| active.iter().map(|&(i, w)| w * row[i]).sum::<f64>();

    struct Partial {
        idx: usize,
        score: f64,
        decay: f64,
        undamped: f64,
    }
    let mut partial: Vec<Partial> = candidates
        .iter()
        .enumerate()
        .map(|(idx, article)| {
            let row = match lookup {
                RowLookup::ById => ctr.row_of(&article.article_id),
                RowLookup::Aligned => (idx < ctr.len()).then_some(idx),
            };
            let undamped = match (row, cfg.signal) {
                (Some(r), ScoreSignal::Ctr) => sparse_dot(ctr.ctr_row(r)),
                (Some(r), ScoreSignal::Clicks) => sparse_dot(ctr.clicks_row(r)),
                (None, _) => absent,
            };
            let decay = decay_factor(&cfg.decay, now, last_access_at, article.published_at);
            Partial {
                idx,
                score: decay * undamped,
                decay,
                undamped,
            }
        })
        .collect();

    let order = |a: &Partial, b: &Partial| {
        let (x, y) = (&candidates[a.idx], &candidates[b.idx]);
        b.score
            .total_cmp(&a.score)
            .then_with(|| y.published_at.cmp(&x.published_at))
            .then_with(|| x.article_id.cmp(&y.article_id))
    };
    if partial.len() > m {
        partial.select_nth_unstable_by(m - 1, order);
        partial.truncate(m);
    }
    partial.sort_by(order);

    Ok(partial
        .into_iter()
        .map(|p| {
            let article = &candidates[p.idx];
            ScoredArticle {
                article_id: article.article_id.clone(),
                published_at: article.published_at,
                score: p.score,
                breakdown: cfg.with_breakdown.then_some(Breakdown {
                    decay_factor: p.decay,
                    undamped_score: p.undamped,
                }),
            }
        })
        .collect())
}

/// Full request path: weights for the user under `model`, then scoring.
pub fn rank(
    user: &UserProfile,
    candidates: &[ArticleRecord],
    model: &ClusterModel,
    ctr: &CtrMatrix,
    cfg: &RankConfig,
    m: usize,
    now: Timestamp,
) -> Result<Vec<ScoredArticle>, ScoreError> {
    if m == 0 {
        return Err(ScoreError::InvalidListSize);
    }
    if model.version != ctr.model_version {
        return Err(ScoreError::StaleWeights {
            weights: model.version,
            snapshot: ctr.model_version,
        });
    }
    if model.k != ctr.k {
        return Err(ScoreError::ClusterCountMismatch {
            model: model.k,
            snapshot: ctr.k,
        });
    }
    let signal = UserSignal {
        vector: user.vector.as_deref(),
        clicks: &user.history,
    };
    let weights = model
        .weights_for(&user.user_id, signal, &cfg.weights)
        .map_err(ScoreError::ColdUser)?;
    rank_with_weights(
        &weights,
        candidates,
        ctr,
        RowLookup::ById,
        cfg,
        user.last_access_at,
        m,
        now,
    )
}

/// Content-based baseline: candidates ordered by inner product with the
/// user vector. Candidates without a vector score 0.
pub fn rank_by_content(user_vector: &[f64], candidates: &[ArticleRecord], m: usize) -> Vec<ScoredArticle> {
    let items = candidates
        .iter()
        .map(|a| ScoredArticle {
            article_id: a.article_id.clone(),
            published_at: a.published_at,
            score: a.vector.as_deref().map_or(0.0, |v| score_content_baseline(user_vector, v)),
            breakdown: None,
        })
        .collect();
    top_m(items, m)
}
