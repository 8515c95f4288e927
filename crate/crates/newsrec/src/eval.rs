//! Offline evaluation over hourly segments in the *all* and *user* modes.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use newsrec_core::cluster::{
    kmeans_fit, minhash_fit, nmf_fit, Algorithm, KMeansParams, MinHashParams, NmfParams, SparseCounts, UserSignal,
};
use newsrec_core::scorer::{rank_by_content, rank_with_weights, RowLookup};
use newsrec_core::{
    average_precision, ndcg, ArticleRecord, BehaviorEvent, ClusterModel, ClusterWeights, CtrMatrix, CtrTable, DecayConfig,
    EventKind, HistoryPolicy, Interaction, RankConfig, ScoreSignal, Smoothing, Timestamp, UserProfile, WeightParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::datagen::{DAY, HOUR};
use crate::events::HourSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Content,
    Cluster(ClusterKind, ScoreSignal),
    /// Clicked articles first.
    Oracle,
    /// Clicked articles last.
    ReverseOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClusterKind {
    KMeans,
    MinHash,
    Nmf,
}

impl ClusterKind {
    fn tag(self) -> &'static str {
        match self {
            ClusterKind::KMeans => "kmeans",
            ClusterKind::MinHash => "minhash",
            ClusterKind::Nmf => "nmf",
        }
    }

    fn label(self) -> &'static str {
        match self {
            ClusterKind::KMeans => "k-means+w2v",
            ClusterKind::MinHash => "MinHash",
            ClusterKind::Nmf => "NMF",
        }
    }

    fn algorithm(self) -> Algorithm {
        match self {
            ClusterKind::KMeans => Algorithm::KMeans,
            ClusterKind::MinHash => Algorithm::MinHash,
            ClusterKind::Nmf => Algorithm::Nmf,
        }
    }
}

impl Method {
    /// The seven compared rows, proposed method last.
    pub const TABLE: [Method; 7] = [
        Method::Content,
        Method::Cluster(ClusterKind::MinHash, ScoreSignal::Clicks),
        Method::Cluster(ClusterKind::MinHash, ScoreSignal::Ctr),
        Method::Cluster(ClusterKind::Nmf, ScoreSignal::Clicks),
        Method::Cluster(ClusterKind::Nmf, ScoreSignal::Ctr),
        Method::Cluster(ClusterKind::KMeans, ScoreSignal::Clicks),
        Method::Cluster(ClusterKind::KMeans, ScoreSignal::Ctr),
    ];

    pub const PROPOSED: Method = Method::Cluster(ClusterKind::KMeans, ScoreSignal::Ctr);

    /// Short machine name, e.g. `kmeans-ctr`.
    pub fn name(self) -> String {
        match self {
            Method::Content => "content".into(),
            Method::Cluster(k, s) => format!("{}-{}", k.tag(), signal_tag(s)),
            Method::Oracle => "oracle".into(),
            Method::ReverseOracle => "reverse-oracle".into(),
        }
    }

    /// Row label in the summary table.
    pub fn label(self) -> String {
        match self {
            Method::Content => "simple content-based".into(),
            Method::Cluster(k, ScoreSignal::Ctr) => format!("{} (CTR)", k.label()),
            Method::Cluster(k, ScoreSignal::Clicks) => format!("{} (Clicks)", k.label()),
            Method::Oracle => "oracle".into(),
            Method::ReverseOracle => "reverse oracle".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "content" => return Some(Method::Content),
            "oracle" => return Some(Method::Oracle),
            "reverse-oracle" => return Some(Method::ReverseOracle),
            _ => {}
        }
        let (k, sig) = s.split_once('-')?;
        let kind = match k {
            "kmeans" => ClusterKind::KMeans,
            "minhash" => ClusterKind::MinHash,
            "nmf" => ClusterKind::Nmf,
            _ => return None,
        };
        let signal = match sig {
            "ctr" => ScoreSignal::Ctr,
            "clicks" => ScoreSignal::Clicks,
            _ => return None,
        };
        Some(Method::Cluster(kind, signal))
    }

    /// `all` expands to the seven table rows; otherwise a comma-separated list.
    pub fn parse_list(s: &str) -> Option<Vec<Method>> {
        if s == "all" {
            return Some(Method::TABLE.to_vec());
        }
        s.split(',').map(|m| Method::parse(m.trim())).collect()
    }
}

fn signal_tag(s: ScoreSignal) -> &'static str {
    match s {
        ScoreSignal::Ctr => "ctr",
        ScoreSignal::Clicks => "clicks",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    All,
    User,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::All => "all",
            Mode::User => "user",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "all" => Some(Mode::All),
            "user" => Some(Mode::User),
            _ => None,
        }
    }

    /// `both` expands to every mode.
    pub fn parse_list(s: &str) -> Option<Vec<Mode>> {
        if s == "both" {
            return Some(vec![Mode::All, Mode::User]);
        }
        s.split(',').map(|m| Mode::parse(m.trim())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub seed: u64,
    /// Clusters for k-means and NMF.
    pub k: usize,
    pub minhash_hashes: usize,
    pub minhash_key_len: usize,
    pub nmf_iters: usize,
    pub kmeans_max_iters: usize,
    /// CTR tables cover this many hours before the evaluated hour.
    pub ctr_window_hours: i64,
    /// Days replayed before the first evaluated hour.
    pub warmup_days: i64,
    /// Cutoff in the *all* mode.
    pub cutoff: usize,
    pub history_capacity: usize,
    pub weight_exponent: f64,
    pub eps: f64,
    /// Pseudo-impressions of the shrinkage prior on cluster CTRs, centred on
    /// the window's pooled CTR. Zero scores the observed rate.
    pub ctr_prior_weight: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 50,
            minhash_hashes: 8,
            minhash_key_len: 1,
            nmf_iters: 100,
            kmeans_max_iters: 100,
            ctr_window_hours: 4,
            warmup_days: 1,
            cutoff: 10,
            history_capacity: 50,
            weight_exponent: 10.0,
            eps: 1e-6,
            ctr_prior_weight: 10.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("segments are not in time order at {0}")]
    UnorderedSegments(Timestamp),
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Overall,
    Day,
    Hour,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Overall => "overall",
            Scope::Day => "day",
            Scope::Hour => "hour",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub mode: &'static str,
    pub scope: Scope,
    /// `all`, a day index, or an hour's start timestamp.
    pub segment: String,
    pub map: f64,
    pub ndcg: f64,
    /// Evaluated users (hour), or evaluated hours (day, overall).
    pub count: usize,
}

/// Window stamps of the CTR tables used for one evaluated hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CtrWindow {
    pub hour_start: Timestamp,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
}

/// Cluster count of one refit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelFit {
    pub label: &'static str,
    pub version: Timestamp,
    pub clusters: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub fits: Vec<ModelFit>,
    pub hours_evaluated: usize,
    /// Clicking users excluded because they had no vector at hour start.
    pub excluded_no_vector: u64,
    pub ctr_windows: Vec<CtrWindow>,
}

impl EvalReport {
    pub fn overall(&self, method: Method, mode: Mode) -> Option<&MetricRow> {
        let name = method.name();
        self.rows
            .iter()
            .find(|r| r.scope == Scope::Overall && r.method == name && r.mode == mode.as_str())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method,mode,scope,segment,map,ndcg,count")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.6},{}",
                r.method,
                r.mode,
                r.scope.as_str(),
                r.segment,
                r.map,
                r.ndcg,
                r.count
            )?;
        }
        Ok(())
    }

    /// Overall values laid out with one row per method and the two modes side by side.
    pub fn summary(&self, methods: &[Method]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} | {:>8} {:>8} | {:>8} {:>8}", "", "all", "", "user", "");
        let _ = writeln!(out, "{:<24} | {:>8} {:>8} | {:>8} {:>8}", "method", "MAP@10", "NDCG@10", "MAP", "NDCG");
        let _ = writeln!(out, "{}", "-".repeat(64));
        let cell = |m: Method, mode: Mode| match self.overall(m, mode) {
            Some(r) => (format!("{:.4}", r.map), format!("{:.4}", r.ndcg)),
            None => ("-".into(), "-".into()),
        };
        for &m in methods {
            let (a1, a2) = cell(m, Mode::All);
            let (u1, u2) = cell(m, Mode::User);
            let _ = writeln!(out, "{:<24} | {a1:>8} {a2:>8} | {u1:>8} {u2:>8}", m.label());
        }
        let _ = writeln!(
            out,
            "hours evaluated: {}, users excluded for lack of a vector: {}",
            self.hours_evaluated, self.excluded_no_vector
        );
        let mut sizes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for f in &self.fits {
            let e = sizes.entry(f.label).or_insert((usize::MAX, 0));
            e.0 = e.0.min(f.clusters);
            e.1 = e.1.max(f.clusters);
        }
        if !sizes.is_empty() {
            let parts: Vec<String> = sizes.iter().map(|(l, (lo, hi))| format!("{l} {lo}..{hi}")).collect();
            let _ = writeln!(out, "clusters per refit: {}", parts.join(", "));
        }
        out
    }
}

/// Inputs shared by every method.
pub struct EvalData<'a> {
    pub catalog: &'a Catalog,
    /// Sorted by timestamp.
    pub events: &'a [BehaviorEvent],
    pub segments: &'a [HourSegment],
}

struct Models {
    by_kind: BTreeMap<ClusterKind, Arc<ClusterModel>>,
}

fn fit_models(
    profiles: &BTreeMap<&str, &UserProfile>,
    kinds: &BTreeSet<ClusterKind>,
    params: &EvalParams,
    version: Timestamp,
    previous: Option<&Models>,
) -> Models {
    let mut by_kind = BTreeMap::new();
    for &kind in kinds {
        let fitted = match kind {
            ClusterKind::KMeans => {
                let users: BTreeMap<String, Vec<f64>> = profiles
                    .iter()
                    .filter_map(|(u, p)| Some((u.to_string(), p.vector.clone()?)))
                    .collect();
                let k = params.k.min(users.len());
                (k > 0)
                    .then(|| {
                        kmeans_fit(
                            &users,
                            &KMeansParams {
                                k,
                                seed: params.seed ^ version as u64,
                                max_iters: params.kmeans_max_iters,
                                tol: 1e-6,
                            },
                        )
                        .ok()
                        .map(|f| f.model)
                    })
                    .flatten()
            }
            ClusterKind::MinHash => {
                let sets: BTreeMap<String, BTreeSet<String>> = profiles
                    .iter()
                    .filter(|(_, p)| !p.history.is_empty())
                    .map(|(u, p)| (u.to_string(), p.click_set()))
                    .collect();
                minhash_fit(
                    &sets,
                    &MinHashParams {
                        num_hashes: params.minhash_hashes,
                        key_len: params.minhash_key_len,
                        seed: params.seed,
                    },
                )
                .ok()
                .filter(|f| f.model.k > 0)
                .map(|f| f.model)
            }
            ClusterKind::Nmf => {
                let rows = profiles
                    .iter()
                    .filter(|(_, p)| !p.history.is_empty())
                    .map(|(u, p)| (*u, p.history.iter().map(String::as_str)));
                let matrix = SparseCounts::from_clicks(rows);
                let k = params.k.min(matrix.num_rows()).min(matrix.num_cols());
                (k > 0)
                    .then(|| {
                        nmf_fit(
                            &matrix,
                            &NmfParams {
                                k,
                                seed: params.seed ^ version as u64,
                                iters: params.nmf_iters,
                            },
                        )
                        .ok()
                        .map(|f| f.model)
                    })
                    .flatten()
            }
        };
        match fitted {
            Some(m) => {
                debug_assert_eq!(m.algorithm(), kind.algorithm());
                by_kind.insert(kind, Arc::new(m.with_version(version as u64)));
            }
            None => {
                if let Some(old) = previous.and_then(|p| p.by_kind.get(&kind)) {
                    by_kind.insert(kind, Arc::clone(old));
                }
            }
        }
    }
    Models { by_kind }
}

struct HourTables {
    matrix: CtrMatrix,
    model: Arc<ClusterModel>,
}

fn ctr_table(
    model: &ClusterModel,
    events: &VecDeque<&BehaviorEvent>,
    profiles: &HashMap<String, UserProfile>,
    from: Timestamp,
    to: Timestamp,
) -> CtrTable {
    let mut table = CtrTable::new(model.k, model.version, from, to).expect("window is positive");
    let mut cluster_cache: HashMap<&str, Option<usize>> = HashMap::new();
    for e in events.iter().filter(|e| e.ts >= from && e.ts < to) {
        let cluster = *cluster_cache.entry(&e.user_id).or_insert_with(|| {
            let p = profiles.get(&e.user_id);
            let signal = UserSignal {
                vector: p.and_then(|p| p.vector.as_deref()),
                clicks: p.map_or(&[][..], |p| &p.history),
            };
            model.cluster_of(&e.user_id, signal)
        });
        let Some(c) = cluster else { continue };
        let interaction = match e.kind {
            EventKind::Impression => Interaction::Impression,
            EventKind::Click => Interaction::Click,
            EventKind::Access => continue,
        };
        let article = e.article_id.as_deref().expect("well-formed event");
        let _ = table.record(interaction, c, article, e.ts);
    }
    table
}

/// Prior worth `weight` impressions at the table's pooled CTR.
pub fn shrinkage(table: &CtrTable, weight: f64) -> Smoothing {
    let impressions = table.total_impressions();
    if weight <= 0.0 || impressions == 0 {
        return Smoothing::NONE;
    }
    Smoothing {
        alpha: weight * table.total_clicks() as f64 / impressions as f64,
        beta: weight,
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    map: f64,
    ndcg: f64,
    n: usize,
}

fn ids(ranked: &[newsrec_core::ScoredArticle]) -> Vec<&str> {
    ranked.iter().map(|s| s.article_id.as_str()).collect()
}

#[allow(clippy::too_many_arguments)]
fn rank_user(
    method: Method,
    profile: &UserProfile,
    candidates: &[ArticleRecord],
    relevant: &BTreeSet<String>,
    tables: &BTreeMap<ClusterKind, HourTables>,
    params: &EvalParams,
    m: usize,
    now: Timestamp,
) -> Vec<String> {
    let weight_params = WeightParams {
        exponent: params.weight_exponent,
        eps: params.eps,
        nmf_soft: false,
    };
    match method {
        Method::Content => {
            let v = profile.vector.as_deref().expect("eligible users have vectors");
            ids(&rank_by_content(v, candidates, m)).into_iter().map(String::from).collect()
        }
        Method::Oracle | Method::ReverseOracle => {
            let mut hit: Vec<String> = candidates
                .iter()
                .filter(|a| relevant.contains(&a.article_id))
                .map(|a| a.article_id.clone())
                .collect();
            let miss = candidates
                .iter()
                .filter(|a| !relevant.contains(&a.article_id))
                .map(|a| a.article_id.clone());
            let mut out: Vec<String> = if method == Method::Oracle {
                hit.extend(miss);
                hit
            } else {
                let mut v: Vec<String> = miss.collect();
                v.extend(hit);
                v
            };
            out.truncate(m);
            out
        }
        Method::Cluster(kind, signal) => {
            let cfg = RankConfig {
                decay: DecayConfig::none(),
                weights: weight_params,
                signal,
                with_breakdown: false,
            };
            let (weights, matrix) = match tables.get(&kind) {
                Some(t) => {
                    let s = UserSignal {
                        vector: profile.vector.as_deref(),
                        clicks: &profile.history,
                    };
                    let w = t
                        .model
                        .weights_for(&profile.user_id, s, &weight_params)
                        .unwrap_or(ClusterWeights {
                            model_version: t.model.version,
                            weights: Vec::new(),
                        });
                    (w, &t.matrix)
                }
                None => return recency(candidates, m),
            };
            match rank_with_weights(&weights, candidates, matrix, RowLookup::ById, &cfg, None, m, now) {
                Ok(r) => ids(&r).into_iter().map(String::from).collect(),
                Err(_) => recency(candidates, m),
            }
        }
    }
}

/// Newest first: the order every method falls back to when it has no signal.
fn recency(candidates: &[ArticleRecord], m: usize) -> Vec<String> {
    let mut v: Vec<&ArticleRecord> = candidates.iter().collect();
    v.sort_by(|a, b| b.published_at.cmp(&a.published_at).then_with(|| a.article_id.cmp(&b.article_id)));
    v.into_iter().take(m).map(|a| a.article_id.clone()).collect()
}

fn candidates_of(catalog: &Catalog, ids: &[String]) -> Vec<ArticleRecord> {
    ids.iter().filter_map(|id| catalog.get(id).cloned()).collect()
}

/// Replays the log hour by hour, refitting the cluster models at each day
/// boundary and scoring every eligible user before the hour's events apply.
pub fn run_experiment(
    data: &EvalData<'_>,
    methods: &[Method],
    modes: &[Mode],
    params: &EvalParams,
) -> Result<EvalReport, EvalError> {
    let segments = data.segments;
    if segments.is_empty() {
        return Err(EvalError::Empty("no segments"));
    }
    for w in segments.windows(2) {
        if w[1].hour_start <= w[0].hour_start {
            return Err(EvalError::UnorderedSegments(w[1].hour_start));
        }
    }
    let kinds: BTreeSet<ClusterKind> = methods
        .iter()
        .filter_map(|m| match m {
            Method::Cluster(k, _) => Some(*k),
            _ => None,
        })
        .collect();
    let policy = HistoryPolicy {
        capacity: params.history_capacity,
        dedup: false,
    };
    let start = segments[0].hour_start;
    let window = params.ctr_window_hours * HOUR;

    let mut profiles: HashMap<String, UserProfile> = HashMap::new();
    let mut buffer: VecDeque<&BehaviorEvent> = VecDeque::new();
    let mut cursor = 0;
    let mut models: Option<Models> = None;
    let mut report = EvalReport::default();
    // (method, mode) -> per-hour (hour_start, Acc)
    let mut hourly: BTreeMap<(Method, Mode), Vec<(Timestamp, Acc)>> = BTreeMap::new();

    for seg in segments {
        let h = seg.hour_start;
        while cursor < data.events.len() && data.events[cursor].ts < h {
            let e = &data.events[cursor];
            cursor += 1;
            match e.kind {
                EventKind::Access => {
                    profiles
                        .entry(e.user_id.clone())
                        .or_insert_with(|| UserProfile::new(&e.user_id))
                        .apply_access(e.ts);
                }
                EventKind::Click => {
                    let article = e.article_id.as_deref().expect("well-formed event");
                    profiles
                        .entry(e.user_id.clone())
                        .or_insert_with(|| UserProfile::new(&e.user_id))
                        .apply_click(article, e.ts, &policy, data.catalog);
                    buffer.push_back(e);
                }
                EventKind::Impression => buffer.push_back(e),
            }
        }
        while buffer.front().is_some_and(|e| e.ts < h - window) {
            buffer.pop_front();
        }

        let since = h - start;
        if since >= params.warmup_days * DAY && since % DAY == 0 && !kinds.is_empty() {
            let view: BTreeMap<&str, &UserProfile> = profiles.iter().map(|(k, v)| (k.as_str(), v)).collect();
            let fitted = fit_models(&view, &kinds, params, h, models.as_ref());
            for (kind, m) in &fitted.by_kind {
                report.fits.push(ModelFit {
                    label: kind.label(),
                    version: h,
                    clusters: m.k,
                });
            }
            models = Some(fitted);
        }
        if since < params.warmup_days * DAY {
            continue;
        }

        let mut row_ids: BTreeSet<&str> = seg.candidates_all.iter().map(String::as_str).collect();
        for list in seg.per_user_displayed.values() {
            row_ids.extend(list.iter().map(String::as_str));
        }
        let row_ids: Vec<String> = row_ids.into_iter().map(String::from).collect();
        let mut tables = BTreeMap::new();
        if let Some(ms) = &models {
            for (&kind, model) in &ms.by_kind {
                let table = ctr_table(model, &buffer, &profiles, h - window, h);
                report.ctr_windows.push(CtrWindow {
                    hour_start: h,
                    window_start: table.window_start,
                    window_end: table.window_end,
                });
                tables.insert(
                    kind,
                    HourTables {
                        matrix: CtrMatrix::with_rows(
                            &table,
                            row_ids.clone(),
                            shrinkage(&table, params.ctr_prior_weight),
                        ),
                        model: Arc::clone(model),
                    },
                );
            }
        }

        let mut eligible: Vec<(&UserProfile, &BTreeSet<String>)> = Vec::new();
        for (user, clicked) in &seg.per_user_clicked {
            match profiles.get(user) {
                Some(p) if p.vector.is_some() => eligible.push((p, clicked)),
                _ => report.excluded_no_vector += 1,
            }
        }
        if eligible.is_empty() {
            continue;
        }
        report.hours_evaluated += 1;
        let all_candidates = candidates_of(data.catalog, &seg.candidates_all);

        for &mode in modes {
            for &method in methods {
                let per_user: Vec<Option<(f64, f64)>> = eligible
                    .par_iter()
                    .map(|&(profile, clicked)| {
                        let (cands, relevant, m, cutoff) = match mode {
                            Mode::All => (
                                std::borrow::Cow::Borrowed(&all_candidates),
                                clicked.clone(),
                                params.cutoff,
                                Some(params.cutoff),
                            ),
                            Mode::User => {
                                let shown = seg.per_user_displayed.get(&profile.user_id)?;
                                let rel: BTreeSet<String> = shown.iter().filter(|a| clicked.contains(*a)).cloned().collect();
                                (std::borrow::Cow::Owned(candidates_of(data.catalog, shown)), rel, shown.len(), None)
                            }
                        };
                        if relevant.is_empty() || cands.is_empty() {
                            return None;
                        }
                        let ranked = rank_user(method, profile, &cands, &relevant, &tables, params, m.max(1), h);
                        let ap = average_precision(&ranked, &relevant, cutoff).ok()?;
                        let g = ndcg(&ranked, &relevant, cutoff).ok()?;
                        Some((ap, g))
                    })
                    .collect();
                let mut acc = Acc::default();
                for (ap, g) in per_user.into_iter().flatten() {
                    acc.map += ap;
                    acc.ndcg += g;
                    acc.n += 1;
                }
                if acc.n > 0 {
                    hourly.entry((method, mode)).or_default().push((h, acc));
                }
            }
        }
    }

    for &mode in modes {
        for &method in methods {
            let hours = hourly.remove(&(method, mode)).unwrap_or_default();
            let name = method.name();
            let mut rows = Vec::new();
            let mut days: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
            let (mut tm, mut tn) = (0.0, 0.0);
            for (h, a) in &hours {
                let (map, nd) = (a.map / a.n as f64, a.ndcg / a.n as f64);
                rows.push(MetricRow {
                    method: name.clone(),
                    mode: mode.as_str(),
                    scope: Scope::Hour,
                    segment: h.to_string(),
                    map,
                    ndcg: nd,
                    count: a.n,
                });
                let d = days.entry((h - start).div_euclid(DAY)).or_default();
                d.0 += map;
                d.1 += nd;
                d.2 += 1;
                tm += map;
                tn += nd;
            }
            let n = hours.len();
            report.rows.push(MetricRow {
                method: name.clone(),
                mode: mode.as_str(),
                scope: Scope::Overall,
                segment: "all".into(),
                map: if n > 0 { tm / n as f64 } else { 0.0 },
                ndcg: if n > 0 { tn / n as f64 } else { 0.0 },
                count: n,
            });
            for (d, (m, g, c)) in days {
                report.rows.push(MetricRow {
                    method: name.clone(),
                    mode: mode.as_str(),
                    scope: Scope::Day,
                    segment: d.to_string(),
                    map: m / c as f64,
                    ndcg: g / c as f64,
                    count: c,
                });
            }
            report.rows.extend(rows);
        }
    }
    Ok(report)
}
