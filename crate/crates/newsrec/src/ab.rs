//! Counterfactual A/B replay against the synthetic click model.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use newsrec_core::cluster::{kmeans_fit, KMeansParams, UserSignal};
use newsrec_core::rng::{fnv1a, mix64, seeded, unit_f64};
use newsrec_core::scorer::{rank_with_weights, RowLookup};
use newsrec_core::vectorizer::TokenWeighting;
use newsrec_core::{
    BehaviorEvent, ClusterModel, ClusterWeights, CtrAggregator, CtrMatrix, DecayConfig, EventKind, HistoryPolicy, Horizon,
    Interaction, RankConfig, ScoreSignal, Smoothing, Timestamp, UserProfile, WeightParams,
};
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::datagen::{click_ts, session_schedule, World, DAY, HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Pooled CTR over every user, no decay.
    Control,
    /// k-means cluster CTR with the time decay function.
    Tdf,
    /// k-means cluster CTR with the user time decay function.
    Utdf,
    /// Uniformly random slate.
    Random,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Control => "control",
            Arm::Tdf => "tdf",
            Arm::Utdf => "utdf",
            Arm::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        match s {
            "control" => Some(Arm::Control),
            "tdf" => Some(Arm::Tdf),
            "utdf" => Some(Arm::Utdf),
            "random" => Some(Arm::Random),
            _ => None,
        }
    }

    pub fn parse_list(s: &str) -> Option<Vec<Arm>> {
        s.split(',').map(|a| Arm::parse(a.trim())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbParams {
    /// Seed of the user-to-arm hash.
    pub assignment_seed: u64,
    pub k: usize,
    pub slate_size: usize,
    pub warmup_days: i64,
    pub window_len: i64,
    pub merge_windows: usize,
    pub ctr_refresh: i64,
    pub model_refresh: i64,
    pub candidate_horizon: i64,
    pub history_capacity: usize,
    pub weight_exponent: f64,
    pub eps: f64,
    pub t_tdf: i64,
    pub t_utdf: i64,
    pub sigma: f64,
    /// Additive prior on serving CTRs, so articles without impressions still rank.
    pub prior_clicks: f64,
    pub prior_impressions: f64,
}

impl Default for AbParams {
    fn default() -> Self {
        Self {
            assignment_seed: 0,
            k: 50,
            slate_size: 10,
            warmup_days: 1,
            window_len: HOUR,
            merge_windows: 4,
            ctr_refresh: 600,
            model_refresh: DAY,
            candidate_horizon: 48 * HOUR,
            history_capacity: 50,
            weight_exponent: 10.0,
            eps: 1e-6,
            t_tdf: newsrec_core::scorer::DEFAULT_T_TDF,
            t_utdf: newsrec_core::scorer::DEFAULT_T_UTDF,
            sigma: newsrec_core::scorer::DEFAULT_SIGMA,
            prior_clicks: 1.0,
            prior_impressions: 20.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AbError {
    #[error("need at least 2 arms, got {0}")]
    TooFewArms(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ArmStats {
    pub sessions: u64,
    pub impressions: u64,
    pub clicks: u64,
    pub sessions_with_click: u64,
}

impl ArmStats {
    pub fn ctr(&self) -> f64 {
        ratio(self.clicks, self.impressions)
    }

    pub fn clicks_per_session(&self) -> f64 {
        ratio(self.clicks, self.sessions)
    }

    /// Share of sessions with at least one click.
    pub fn click_users_per_session(&self) -> f64 {
        ratio(self.sessions_with_click, self.sessions)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmResult {
    pub arm: &'static str,
    pub stats: ArmStats,
    pub ctr_ratio: f64,
    pub clicks_per_session_ratio: f64,
    pub click_users_per_session_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbReport {
    pub arms: Vec<ArmResult>,
}

impl AbReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>8} {:>16} {:>22}\n",
            "arm", "sessions", "CTR", "Clicks/Sessions", "Click Users/Sessions"
        );
        for a in &self.arms {
            out.push_str(&format!(
                "{:<10} {:>9} {:>8.4} {:>16.4} {:>22.4}\n",
                a.arm, a.stats.sessions, a.ctr_ratio, a.clicks_per_session_ratio, a.click_users_per_session_ratio
            ));
        }
        out
    }
}

/// Arm of `user_id` for `n` arms under `seed`.
pub fn assign_arm(user_id: &str, seed: u64, n: usize) -> usize {
    (mix64(fnv1a(user_id) ^ mix64(seed)) % n as u64) as usize
}

struct Serving {
    model: Option<Arc<ClusterModel>>,
    aggregator: Option<CtrAggregator>,
    pool: Vec<newsrec_core::ArticleRecord>,
    matrix: Option<CtrMatrix>,
    pooled: Option<CtrMatrix>,
}

fn fit(profiles: &HashMap<String, UserProfile>, k: usize, version: Timestamp, seed: u64) -> Option<Arc<ClusterModel>> {
    let users: BTreeMap<String, Vec<f64>> = profiles
        .iter()
        .filter_map(|(u, p)| Some((u.clone(), p.vector.clone()?)))
        .collect();
    let k = k.min(users.len());
    if k == 0 {
        return None;
    }
    let params = KMeansParams {
        k,
        seed: seed ^ version as u64,
        ..KMeansParams::default()
    };
    kmeans_fit(&users, &params).ok().map(|f| Arc::new(f.model.with_version(version as u64)))
}

fn attribute(
    agg: &mut CtrAggregator,
    model: &ClusterModel,
    profiles: &HashMap<String, UserProfile>,
    e: &BehaviorEvent,
) {
    let interaction = match e.kind {
        EventKind::Impression => Interaction::Impression,
        EventKind::Click => Interaction::Click,
        EventKind::Access => return,
    };
    let p = profiles.get(&e.user_id);
    let signal = UserSignal {
        vector: p.and_then(|p| p.vector.as_deref()),
        clicks: p.map_or(&[][..], |p| &p.history),
    };
    if let Some(c) = model.cluster_of(&e.user_id, signal) {
        let _ = agg.ingest(interaction, c, e.article_id.as_deref().unwrap_or_default(), e.ts);
    }
}

/// Warm-up on the logged traffic, then every later logged session is served
/// by its user's arm and answered by the world's click model.
pub fn ab_replay(world: &World, log: &[BehaviorEvent], arms: &[Arm], params: &AbParams) -> Result<AbReport, AbError> {
    if arms.len() < 2 {
        return Err(AbError::TooFewArms(arms.len()));
    }
    if params.window_len <= 0 || params.ctr_refresh <= 0 || params.model_refresh <= 0 || params.slate_size == 0 {
        return Err(AbError::InvalidParameter("windows, refresh cadences and slate size must be positive"));
    }
    let catalog = Catalog::from_lines(&world.articles, &world.embeddings, &world.idf, TokenWeighting::PerOccurrence);
    let policy = HistoryPolicy {
        capacity: params.history_capacity,
        dedup: false,
    };
    let weights = WeightParams {
        exponent: params.weight_exponent,
        eps: params.eps,
        nmf_soft: false,
    };
    let smoothing = Smoothing {
        alpha: params.prior_clicks,
        beta: params.prior_impressions,
    };
    let tdf = DecayConfig {
        threshold_seconds: params.t_tdf,
        sigma: params.sigma,
        ..DecayConfig::tdf()
    };
    let utdf = DecayConfig {
        threshold_seconds: params.t_utdf,
        sigma: params.sigma,
        ..DecayConfig::utdf()
    };
    let buffer_span = params.window_len * params.merge_windows.max(1) as i64;
    let warm_end = world.spec.start_ts + params.warmup_days * DAY;

    let mut profiles: HashMap<String, UserProfile> = HashMap::new();
    let mut buffer: VecDeque<BehaviorEvent> = VecDeque::new();
    let apply = |profiles: &mut HashMap<String, UserProfile>, e: &BehaviorEvent| {
        let p = profiles.entry(e.user_id.clone()).or_insert_with(|| UserProfile::new(&e.user_id));
        match e.kind {
            EventKind::Access => p.apply_access(e.ts),
            EventKind::Click => {
                p.apply_click(e.article_id.as_deref().unwrap_or_default(), e.ts, &policy, &catalog);
            }
            EventKind::Impression => {}
        }
    };
    for e in log.iter().filter(|e| e.ts < warm_end) {
        apply(&mut profiles, e);
        if e.kind != EventKind::Access {
            buffer.push_back(e.clone());
        }
    }

    let mut serving = Serving {
        model: None,
        aggregator: None,
        pool: Vec::new(),
        matrix: None,
        pooled: None,
    };
    let mut next_model = warm_end;
    let mut next_ctr = warm_end;
    let mut stats = vec![ArmStats::default(); arms.len()];
    let mut rng = seeded(mix64(params.assignment_seed ^ 0x5eed));
    let model = world.click_model();
    let mut prev: HashMap<usize, Timestamp> = HashMap::new();
    for e in log.iter().filter(|e| e.ts < warm_end && e.kind == EventKind::Access) {
        if let Some(u) = world.user_idx(&e.user_id) {
            prev.insert(u, e.ts);
        }
    }
    // Users click an article at most once.
    let mut read: HashMap<usize, HashSet<usize>> = HashMap::new();
    for e in log.iter().filter(|e| e.ts < warm_end && e.kind == EventKind::Click) {
        let u = world.user_idx(&e.user_id);
        let a = e.article_id.as_deref().and_then(|id| world.article_idx(id));
        if let (Some(u), Some(a)) = (u, a) {
            read.entry(u).or_default().insert(a);
        }
    }
    let mut seq: HashMap<usize, u64> = HashMap::new();

    for (ts, user) in session_schedule(world).into_iter().filter(|(ts, _)| *ts >= warm_end) {
        while buffer.front().is_some_and(|e| e.ts < ts - buffer_span) {
            buffer.pop_front();
        }
        if ts >= next_model {
            if let Some(m) = fit(&profiles, params.k, next_model, params.assignment_seed) {
                let mut agg = CtrAggregator::new(
                    m.k,
                    m.version,
                    next_model - buffer_span,
                    params.window_len,
                    Horizon::Windows(params.merge_windows),
                )
                .expect("positive window");
                for e in &buffer {
                    attribute(&mut agg, &m, &profiles, e);
                }
                serving.model = Some(m);
                serving.aggregator = Some(agg);
            }
            while next_model <= ts {
                next_model += params.model_refresh;
            }
            next_ctr = ts;
        }
        if ts >= next_ctr {
            if let Some(agg) = serving.aggregator.as_mut() {
                agg.advance_to(ts);
                let table = agg.snapshot();
                serving.pool = catalog.published_in(ts - params.candidate_horizon, ts).to_vec();
                let ids: Vec<String> = serving.pool.iter().map(|a| a.article_id.clone()).collect();
                serving.matrix = Some(CtrMatrix::with_rows(&table, ids.clone(), smoothing));
                serving.pooled = Some(CtrMatrix::with_rows(&table.pooled(), ids, smoothing));
            }
            while next_ctr <= ts {
                next_ctr += params.ctr_refresh;
            }
        }
        let (Some(matrix), Some(pooled)) = (&serving.matrix, &serving.pooled) else {
            continue;
        };
        if serving.pool.is_empty() {
            continue;
        }

        let user_id = &world.users[user].user_id;
        let arm_idx = assign_arm(user_id, params.assignment_seed, arms.len());
        let profile = profiles.get(user_id);
        let last_access = profile.and_then(|p| p.last_access_at);
        let m = params.slate_size;
        let pooled_weights = ClusterWeights {
            model_version: pooled.model_version,
            weights: vec![(0, 1.0)],
        };
        let ranked = match arms[arm_idx] {
            Arm::Random => {
                let mut idx: Vec<usize> = (0..serving.pool.len()).collect();
                let n = m.min(idx.len());
                for i in 0..n {
                    let last = idx.len() - 1;
                    let j = i + (unit_f64(&mut rng) * (idx.len() - i) as f64) as usize;
                    idx.swap(i, j.min(last));
                }
                idx.truncate(n);
                idx.into_iter().map(|i| serving.pool[i].article_id.clone()).collect::<Vec<_>>()
            }
            arm => {
                let personal = match (arm, profile, &serving.model) {
                    (Arm::Tdf | Arm::Utdf, Some(p), Some(model)) => model
                        .weights_for(
                            user_id,
                            UserSignal {
                                vector: p.vector.as_deref(),
                                clicks: &p.history,
                            },
                            &weights,
                        )
                        .ok(),
                    _ => None,
                };
                let (w, mat, decay) = match (arm, personal) {
                    (Arm::Control, _) => (pooled_weights, pooled, DecayConfig::none()),
                    (_, None) => (pooled_weights, pooled, tdf),
                    (Arm::Utdf, Some(w)) => (w, matrix, utdf),
                    (_, Some(w)) => (w, matrix, tdf),
                };
                let cfg = RankConfig {
                    decay,
                    weights,
                    signal: ScoreSignal::Ctr,
                    with_breakdown: false,
                };
                rank_with_weights(&w, &serving.pool, mat, RowLookup::Aligned, &cfg, last_access, m, ts)
                    .expect("versions come from one snapshot")
                    .into_iter()
                    .map(|s| s.article_id)
                    .collect()
            }
        };

        let prev_visit = prev.get(&user).copied();
        let s = &mut stats[arm_idx];
        s.sessions += 1;
        let mut any = false;
        let sq = seq.entry(user).or_insert(0);
        let mut session_events = vec![BehaviorEvent {
            kind: EventKind::Access,
            user_id: user_id.clone(),
            article_id: None,
            ts,
            seq: *sq,
        }];
        *sq += 1;
        let mut clicks = Vec::new();
        for (pos, id) in ranked.iter().enumerate() {
            let a = world.article_idx(id).expect("pool articles come from the world");
            s.impressions += 1;
            session_events.push(BehaviorEvent {
                kind: EventKind::Impression,
                user_id: user_id.clone(),
                article_id: Some(id.clone()),
                ts,
                seq: *sq,
            });
            *sq += 1;
            if model.clicks(user, a, ts, prev_visit) && read.entry(user).or_default().insert(a) {
                s.clicks += 1;
                any = true;
                clicks.push(BehaviorEvent {
                    kind: EventKind::Click,
                    user_id: user_id.clone(),
                    article_id: Some(id.clone()),
                    ts: click_ts(ts, pos, world.spec.start_ts),
                    seq: 0,
                });
            }
        }
        for c in &mut clicks {
            c.seq = *sq;
            *sq += 1;
        }
        session_events.extend(clicks);
        s.sessions_with_click += u64::from(any);
        prev.insert(user, ts);

        for e in &session_events {
            if let (Some(agg), Some(m)) = (serving.aggregator.as_mut(), &serving.model) {
                attribute(agg, m, &profiles, e);
            }
            apply(&mut profiles, e);
            if e.kind != EventKind::Access {
                buffer.push_back(e.clone());
            }
        }
    }

    let base = stats[0];
    let arms = arms
        .iter()
        .zip(&stats)
        .map(|(a, s)| ArmResult {
            arm: a.as_str(),
            stats: *s,
            ctr_ratio: ratio_f(s.ctr(), base.ctr()),
            clicks_per_session_ratio: ratio_f(s.clicks_per_session(), base.clicks_per_session()),
            click_users_per_session_ratio: ratio_f(s.click_users_per_session(), base.click_users_per_session()),
        })
        .collect();
    Ok(AbReport { arms })
}

fn ratio_f(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}
