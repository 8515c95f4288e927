//! In-memory recommendation service over atomically swapped snapshots.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use arc_swap::ArcSwapOption;
use newsrec_core::cluster::{ClusterWeights, UserSignal};
use newsrec_core::scorer::{rank_with_weights, RowLookup};
use newsrec_core::{
    ArticleRecord, ClusterModel, CtrMatrix, CtrTable, DecayConfig, RankConfig, ScoreSignal, ScoredArticle, Smoothing,
    Timestamp, WeightParams,
};
use serde::Serialize;

use crate::catalog::Catalog;
use crate::events::{parse_event, BadLine};
use crate::pipeline::Pipeline;
use crate::store::{ProfileStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no snapshot installed")]
    NoSnapshot,
    #[error("m must be at least 1")]
    InvalidM,
    #[error("version mismatch: model {model}, CTR snapshot {ctr}")]
    VersionMismatch { model: u64, ctr: u64 },
    #[error("model has {model} clusters but the CTR snapshot has {ctr}")]
    ClusterCountMismatch { model: usize, ctr: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("scoring failed: {0}")]
    Score(#[from] newsrec_core::ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    pub decay: DecayConfig,
    /// Decay applied to the pooled-CTR fallback list.
    pub fallback_decay: DecayConfig,
    pub weights: WeightParams,
    pub smoothing: Smoothing,
    /// Articles older than this (seconds) leave the candidate pool.
    pub candidate_horizon: i64,
    pub with_breakdown: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            decay: DecayConfig::utdf(),
            fallback_decay: DecayConfig::tdf(),
            weights: WeightParams::default(),
            smoothing: Smoothing::NONE,
            candidate_horizon: 48 * 3600,
            with_breakdown: true,
        }
    }
}

/// A version-consistent model and CTR table with the candidate pool
/// and dense matrices derived from them.
pub struct ServingSnapshot {
    pub model: Arc<ClusterModel>,
    pub ctr_table: Arc<CtrTable>,
    pub loaded_at: Timestamp,
    pool: Vec<ArticleRecord>,
    /// Row `i` belongs to `pool[i]`.
    matrix: CtrMatrix,
    pooled: CtrMatrix,
}

impl ServingSnapshot {
    /// Pool: catalog articles published within the horizon before `now`
    /// that have at least one impression in `ctr_table`.
    pub fn build(
        model: Arc<ClusterModel>,
        ctr_table: Arc<CtrTable>,
        catalog: &Catalog,
        now: Timestamp,
        cfg: &ServiceConfig,
    ) -> Result<Self, ServiceError> {
        if model.version != ctr_table.model_version {
            return Err(ServiceError::VersionMismatch {
                model: model.version,
                ctr: ctr_table.model_version,
            });
        }
        if model.k != ctr_table.num_clusters {
            return Err(ServiceError::ClusterCountMismatch {
                model: model.k,
                ctr: ctr_table.num_clusters,
            });
        }
        let pool: Vec<ArticleRecord> = catalog
            .published_in(now - cfg.candidate_horizon, now)
            .iter()
            .filter(|a| ctr_table.article_impressions(&a.article_id) > 0)
            .cloned()
            .collect();
        let ids: Vec<String> = pool.iter().map(|a| a.article_id.clone()).collect();
        let matrix = CtrMatrix::with_rows(&ctr_table, ids.clone(), cfg.smoothing);
        let pooled = CtrMatrix::with_rows(&ctr_table.pooled(), ids, cfg.smoothing);
        Ok(Self {
            model,
            ctr_table,
            loaded_at: now,
            pool,
            matrix,
            pooled,
        })
    }

    pub fn pool(&self) -> &[ArticleRecord] {
        &self.pool
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Breakdown {
    pub decay_factor: f64,
    pub undamped_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecItem {
    pub article_id: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Breakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub user_id: String,
    pub fallback: bool,
    /// Version of the model the weights came from.
    pub model_version: u64,
    /// Version stamp of the CTR table the scores came from.
    pub ctr_version: u64,
    pub ctr_window: [Timestamp; 2],
    pub items: Vec<RecItem>,
}

/// Upper bounds (microseconds) of the latency histogram buckets; the last bucket is open.
pub const LATENCY_BUCKETS_US: [u64; 12] = [250, 500, 1_000, 2_500, 5_000, 10_000, 25_000, 50_000, 100_000, 250_000, 1_000_000, u64::MAX];

#[derive(Debug, Default)]
struct Metrics {
    requests: AtomicU64,
    fallbacks: AtomicU64,
    weight_computations: AtomicU64,
    refreshes: AtomicU64,
    rejected_refreshes: AtomicU64,
    latency: [AtomicU64; LATENCY_BUCKETS_US.len()],
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyBucket {
    pub le_us: Option<u64>,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub requests: u64,
    pub fallbacks: u64,
    pub fallback_rate: f64,
    /// Per-user weight computations; only requests trigger them.
    pub weight_computations: u64,
    pub refreshes: u64,
    pub rejected_refreshes: u64,
    pub latency: Vec<LatencyBucket>,
    pub pipeline: Option<crate::pipeline::CounterValues>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub healthy: bool,
    pub model_version: Option<u64>,
    pub ctr_window: Option<[Timestamp; 2]>,
    pub loaded_at: Option<Timestamp>,
    pub pool_size: usize,
    pub last_refresh_error: Option<String>,
    pub uptime_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestAck {
    pub accepted: u64,
    pub rejected: u64,
    pub anomalies: u64,
    pub errors: Vec<BadLine>,
}

pub struct RecService<S> {
    snapshot: ArcSwapOption<ServingSnapshot>,
    pipeline: Arc<Pipeline<S>>,
    cfg: ServiceConfig,
    metrics: Metrics,
    healthy: AtomicBool,
    last_error: Mutex<Option<String>>,
    ingest_lock: Mutex<()>,
    started: Instant,
}

impl<S: ProfileStore> RecService<S> {
    pub fn new(pipeline: Arc<Pipeline<S>>, cfg: ServiceConfig) -> Self {
        Self {
            snapshot: ArcSwapOption::empty(),
            pipeline,
            cfg,
            metrics: Metrics::default(),
            healthy: AtomicBool::new(true),
            last_error: Mutex::new(None),
            ingest_lock: Mutex::new(()),
            started: Instant::now(),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn pipeline(&self) -> &Arc<Pipeline<S>> {
        &self.pipeline
    }

    pub fn snapshot(&self) -> Option<Arc<ServingSnapshot>> {
        self.snapshot.load_full()
    }

    /// Builds and installs a snapshot. On failure the previous snapshot stays
    /// in place and the health flag drops until the next good refresh.
    pub fn refresh(&self, model: Arc<ClusterModel>, ctr: Arc<CtrTable>, now: Timestamp) -> Result<(), ServiceError> {
        match ServingSnapshot::build(model, ctr, self.pipeline.catalog(), now, &self.cfg) {
            Ok(s) => {
                self.snapshot.store(Some(Arc::new(s)));
                self.metrics.refreshes.fetch_add(1, Ordering::Relaxed);
                self.healthy.store(true, Ordering::Relaxed);
                *self.last_error.lock().expect("error lock") = None;
                Ok(())
            }
            Err(e) => {
                self.metrics.rejected_refreshes.fetch_add(1, Ordering::Relaxed);
                self.healthy.store(false, Ordering::Relaxed);
                *self.last_error.lock().expect("error lock") = Some(e.to_string());
                Err(e)
            }
        }
    }

    /// Installs the pipeline's current model and closed CTR windows, if any window has closed.
    pub fn refresh_from_pipeline(&self, now: Timestamp) -> Result<bool, ServiceError> {
        let Some((model, table)) = self.pipeline.ctr_snapshot(now) else {
            return Ok(false);
        };
        if table.window_start == table.window_end {
            return Ok(false);
        }
        self.refresh(model, Arc::new(table), now).map(|_| true)
    }

    /// Top `m` articles for `user_id` at `now`. The request itself counts as
    /// an access, recorded after scoring.
    pub fn recommend(&self, user_id: &str, m: usize, now: Timestamp) -> Result<Recommendation, ServiceError> {
        let started = Instant::now();
        if m == 0 {
            return Err(ServiceError::InvalidM);
        }
        let snap = self.snapshot.load_full().ok_or(ServiceError::NoSnapshot)?;
        let profile = self.pipeline.store().get(user_id);
        let last_access = profile.as_ref().and_then(|p| p.last_access_at);

        let personal = profile.as_ref().and_then(|p| {
            self.metrics.weight_computations.fetch_add(1, Ordering::Relaxed);
            let signal = UserSignal {
                vector: p.vector.as_deref(),
                clicks: &p.history,
            };
            snap.model.weights_for(user_id, signal, &self.cfg.weights).ok()
        });
        let fallback = personal.is_none();
        let (weights, matrix, decay) = match personal {
            Some(w) => (w, &snap.matrix, self.cfg.decay),
            None => (
                ClusterWeights {
                    model_version: snap.pooled.model_version,
                    weights: vec![(0, 1.0)],
                },
                &snap.pooled,
                self.cfg.fallback_decay,
            ),
        };
        let rank_cfg = RankConfig {
            decay,
            weights: self.cfg.weights,
            signal: ScoreSignal::Ctr,
            with_breakdown: self.cfg.with_breakdown,
        };
        let ranked = rank_with_weights(&weights, &snap.pool, matrix, RowLookup::Aligned, &rank_cfg, last_access, m, now)?;

        self.pipeline.handle_access(user_id, now)?;
        self.metrics.requests.fetch_add(1, Ordering::Relaxed);
        if fallback {
            self.metrics.fallbacks.fetch_add(1, Ordering::Relaxed);
        }
        let out = Recommendation {
            user_id: user_id.to_string(),
            fallback,
            model_version: weights.model_version,
            ctr_version: matrix.model_version,
            ctr_window: [snap.ctr_table.window_start, snap.ctr_table.window_end],
            items: ranked.into_iter().map(item).collect(),
        };
        self.observe_latency(started.elapsed().as_micros() as u64);
        Ok(out)
    }

    fn observe_latency(&self, us: u64) {
        let i = LATENCY_BUCKETS_US.iter().position(|&b| us <= b).unwrap_or(LATENCY_BUCKETS_US.len() - 1);
        self.metrics.latency[i].fetch_add(1, Ordering::Relaxed);
    }

    /// Applies a batch of JSON-lines events in order.
    pub fn ingest(&self, body: &str) -> Result<IngestAck, ServiceError> {
        // One batch at a time keeps each user's events in submission order.
        let _guard = self.ingest_lock.lock().expect("ingest lock");
        let mut ack = IngestAck::default();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match parse_event(line) {
                Ok(e) => {
                    let h = self.pipeline.handle(&e)?;
                    ack.accepted += 1;
                    if h.ctr_anomaly {
                        ack.anomalies += 1;
                    }
                }
                Err(err) => {
                    ack.rejected += 1;
                    ack.errors.push(BadLine {
                        line: i + 1,
                        error: err.to_string(),
                    });
                }
            }
        }
        Ok(ack)
    }

    pub fn health(&self) -> Health {
        let snap = self.snapshot.load_full();
        Health {
            healthy: self.healthy.load(Ordering::Relaxed) && snap.is_some(),
            model_version: snap.as_ref().map(|s| s.model.version),
            ctr_window: snap.as_ref().map(|s| [s.ctr_table.window_start, s.ctr_table.window_end]),
            loaded_at: snap.as_ref().map(|s| s.loaded_at),
            pool_size: snap.as_ref().map_or(0, |s| s.pool.len()),
            last_refresh_error: self.last_error.lock().expect("error lock").clone(),
            uptime_secs: self.started.elapsed().as_secs_f64(),
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        let m = &self.metrics;
        let requests = m.requests.load(Ordering::Relaxed);
        let fallbacks = m.fallbacks.load(Ordering::Relaxed);
        MetricsReport {
            requests,
            fallbacks,
            fallback_rate: if requests == 0 { 0.0 } else { fallbacks as f64 / requests as f64 },
            weight_computations: m.weight_computations.load(Ordering::Relaxed),
            refreshes: m.refreshes.load(Ordering::Relaxed),
            rejected_refreshes: m.rejected_refreshes.load(Ordering::Relaxed),
            latency: LATENCY_BUCKETS_US
                .iter()
                .zip(&m.latency)
                .map(|(&b, c)| LatencyBucket {
                    le_us: (b != u64::MAX).then_some(b),
                    count: c.load(Ordering::Relaxed),
                })
                .collect(),
            pipeline: Some(self.pipeline.counters()),
        }
    }
}

fn item(s: ScoredArticle) -> RecItem {
    RecItem {
        article_id: s.article_id,
        score: s.score,
        breakdown: s.breakdown.map(|b| Breakdown {
            decay_factor: b.decay_factor,
            undamped_score: b.undamped_score,
        }),
    }
}
