//! Event ingestion: profile updates plus per-cluster CTR accumulation.

use std::io::BufRead;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use newsrec_core::cluster::UserSignal;
use newsrec_core::ctr::RecordOutcome;
use newsrec_core::{
    ArticleVectors, BehaviorEvent, ClusterModel, CtrAggregator, CtrError, CtrTable, EventKind, HistoryPolicy, Horizon, Interaction,
    Timestamp, UserProfile,
};
use serde::Serialize;

use crate::catalog::Catalog;
use crate::events::{parse_event, BadLine};
use crate::formats::FormatError;
use crate::store::{ProfileStore, StoreError};

/// Model used to attribute impressions and clicks, and the windows they land in.
pub struct Attribution {
    pub model: Arc<ClusterModel>,
    pub aggregator: CtrAggregator,
}

impl Attribution {
    pub fn new(model: Arc<ClusterModel>, start: Timestamp, window_len: i64, horizon: Horizon) -> Result<Self, CtrError> {
        let aggregator = CtrAggregator::new(model.k, model.version, start, window_len, horizon)?;
        Ok(Self { model, aggregator })
    }
}

#[derive(Debug, Default)]
struct Counters {
    impressions: AtomicU64,
    clicks: AtomicU64,
    accesses: AtomicU64,
    unknown_articles: AtomicU64,
    ctr_anomalies: AtomicU64,
    unattributed: AtomicU64,
    late: AtomicU64,
}

/// Totals since the pipeline was created.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CounterValues {
    pub impressions: u64,
    pub clicks: u64,
    pub accesses: u64,
    pub unknown_articles: u64,
    pub ctr_anomalies: u64,
    /// Impressions or clicks by users the model cannot place.
    pub unattributed: u64,
    /// Events older than the open CTR window.
    pub late: u64,
}

/// What happened to one event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Handled {
    pub unknown_article: bool,
    pub ctr_anomaly: bool,
}

pub struct Pipeline<S> {
    store: Arc<S>,
    catalog: Arc<Catalog>,
    policy: HistoryPolicy,
    attribution: Mutex<Option<Attribution>>,
    counters: Counters,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReplayReport {
    pub lines: u64,
    pub impressions: u64,
    pub clicks: u64,
    pub accesses: u64,
    pub malformed: u64,
    /// First malformed lines, at most [`MAX_REPORTED_BAD_LINES`].
    pub malformed_lines: Vec<BadLine>,
    pub unknown_articles: u64,
    pub ctr_anomalies: u64,
    pub unattributed: u64,
    pub late: u64,
    pub elapsed_secs: f64,
    pub events_per_sec: f64,
}

pub const MAX_REPORTED_BAD_LINES: usize = 100;

impl<S: ProfileStore> Pipeline<S> {
    pub fn new(store: Arc<S>, catalog: Arc<Catalog>, policy: HistoryPolicy) -> Self {
        Self {
            store,
            catalog,
            policy,
            attribution: Mutex::new(None),
            counters: Counters::default(),
        }
    }

    pub fn store(&self) -> &Arc<S> {
        &self.store
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn policy(&self) -> HistoryPolicy {
        self.policy
    }

    /// Replaces the attribution model; CTR accumulation restarts at `start`.
    pub fn set_attribution(&self, attribution: Attribution) {
        *self.attribution.lock().expect("attribution lock") = Some(attribution);
    }

    pub fn attribution_model(&self) -> Option<Arc<ClusterModel>> {
        self.attribution.lock().expect("attribution lock").as_ref().map(|a| Arc::clone(&a.model))
    }

    /// Closes windows up to `now` and returns the model with its merged closed windows.
    pub fn ctr_snapshot(&self, now: Timestamp) -> Option<(Arc<ClusterModel>, CtrTable)> {
        let mut guard = self.attribution.lock().expect("attribution lock");
        let a = guard.as_mut()?;
        a.aggregator.advance_to(now);
        Some((Arc::clone(&a.model), a.aggregator.snapshot()))
    }

    pub fn counters(&self) -> CounterValues {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        CounterValues {
            impressions: get(&c.impressions),
            clicks: get(&c.clicks),
            accesses: get(&c.accesses),
            unknown_articles: get(&c.unknown_articles),
            ctr_anomalies: get(&c.ctr_anomalies),
            unattributed: get(&c.unattributed),
            late: get(&c.late),
        }
    }

    /// Applies a click to the profile store only.
    pub fn handle_click(&self, user_id: &str, article_id: &str, ts: Timestamp) -> Result<Arc<UserProfile>, StoreError> {
        let mut unknown = false;
        let profile = self.store.update(user_id, &mut |p| {
            unknown = p.apply_click(article_id, ts, &self.policy, &*self.catalog).unknown_article;
        })?;
        self.counters.clicks.fetch_add(1, Ordering::Relaxed);
        if unknown {
            self.counters.unknown_articles.fetch_add(1, Ordering::Relaxed);
        }
        Ok(profile)
    }

    pub fn handle_access(&self, user_id: &str, ts: Timestamp) -> Result<Arc<UserProfile>, StoreError> {
        let p = self.store.update(user_id, &mut |p| p.apply_access(ts))?;
        self.counters.accesses.fetch_add(1, Ordering::Relaxed);
        Ok(p)
    }

    fn record_ctr(&self, interaction: Interaction, user_id: &str, article_id: &str, ts: Timestamp) -> bool {
        let mut guard = self.attribution.lock().expect("attribution lock");
        let Some(a) = guard.as_mut() else {
            return false;
        };
        let profile = self.store.get(user_id);
        let signal = UserSignal {
            vector: profile.as_ref().and_then(|p| p.vector.as_deref()),
            clicks: profile.as_ref().map_or(&[][..], |p| &p.history),
        };
        let Some(cluster) = a.model.cluster_of(user_id, signal) else {
            self.counters.unattributed.fetch_add(1, Ordering::Relaxed);
            return false;
        };
        match a.aggregator.ingest(interaction, cluster, article_id, ts) {
            Ok(RecordOutcome::Counted) => false,
            Ok(RecordOutcome::ClickBeforeImpression) => {
                self.counters.ctr_anomalies.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(CtrError::OutsideWindow { .. }) => {
                self.counters.late.fetch_add(1, Ordering::Relaxed);
                false
            }
            Err(_) => {
                self.counters.unattributed.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    /// Dispatches one event. Clicks are attributed to the clicker's cluster
    /// as it stood before the click.
    pub fn handle(&self, e: &BehaviorEvent) -> Result<Handled, StoreError> {
        let mut out = Handled::default();
        match e.kind {
            EventKind::Access => {
                self.handle_access(&e.user_id, e.ts)?;
            }
            EventKind::Impression => {
                let article = e.article_id.as_deref().unwrap_or_default();
                self.counters.impressions.fetch_add(1, Ordering::Relaxed);
                out.ctr_anomaly = self.record_ctr(Interaction::Impression, &e.user_id, article, e.ts);
            }
            EventKind::Click => {
                let article = e.article_id.as_deref().unwrap_or_default();
                out.ctr_anomaly = self.record_ctr(Interaction::Click, &e.user_id, article, e.ts);
                out.unknown_article = !self.catalog.contains(article);
                self.handle_click(&e.user_id, article, e.ts)?;
            }
        }
        Ok(out)
    }

    /// Replays parsed events in order.
    pub fn replay_events<'a>(&self, events: impl IntoIterator<Item = &'a BehaviorEvent>) -> Result<ReplayReport, StoreError> {
        let started = Instant::now();
        let before = self.counters();
        let mut lines = 0;
        for e in events {
            lines += 1;
            self.handle(e)?;
        }
        Ok(self.report(before, lines, Vec::new(), 0, started))
    }

    /// Replays a JSON-lines log; malformed lines are skipped and reported.
    pub fn replay<R: BufRead>(&self, r: R) -> Result<ReplayReport, FormatError> {
        let started = Instant::now();
        let before = self.counters();
        let mut lines = 0;
        let mut malformed = 0;
        let mut bad = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            lines += 1;
            match parse_event(&line) {
                Ok(e) => {
                    self.handle(&e).map_err(|e| FormatError::Io(std::io::Error::other(e)))?;
                }
                Err(err) => {
                    malformed += 1;
                    if bad.len() < MAX_REPORTED_BAD_LINES {
                        bad.push(BadLine {
                            line: i + 1,
                            error: err.to_string(),
                        });
                    }
                }
            }
        }
        Ok(self.report(before, lines, bad, malformed, started))
    }

    fn report(&self, before: CounterValues, lines: u64, bad: Vec<BadLine>, malformed: u64, started: Instant) -> ReplayReport {
        let after = self.counters();
        let elapsed = started.elapsed().as_secs_f64();
        let events = lines - malformed;
        ReplayReport {
            lines,
            impressions: after.impressions - before.impressions,
            clicks: after.clicks - before.clicks,
            accesses: after.accesses - before.accesses,
            malformed,
            malformed_lines: bad,
            unknown_articles: after.unknown_articles - before.unknown_articles,
            ctr_anomalies: after.ctr_anomalies - before.ctr_anomalies,
            unattributed: after.unattributed - before.unattributed,
            late: after.late - before.late,
            elapsed_secs: elapsed,
            events_per_sec: if elapsed > 0.0 { events as f64 / elapsed } else { 0.0 },
        }
    }
}
