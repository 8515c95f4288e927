//! Seeded synthetic news world: topics, vocabulary, articles, users, and
//! behavior logs drawn from an explicit click model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use newsrec_core::rng::{fnv1a, mix64, seeded, unit_f64, SeededRng};
use newsrec_core::vector::{dot, normalize};
use newsrec_core::vectorizer::{article_vector, build_idf, TokenWeighting};
use newsrec_core::{BehaviorEvent, EmbeddingTable, EventKind, IdfTable, Timestamp};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::events::{write_articles, write_events, write_segments, ArticleLine, HourSegment};
use crate::formats::{write_embeddings_fixed, write_idf, FormatError};

pub const HOUR: i64 = 3600;
pub const DAY: i64 = 24 * HOUR;
/// Decimals kept for word embeddings, in memory and on disk.
pub const EMBEDDING_DECIMALS: usize = 6;
/// Seconds between an impression and a click at slate position `p` is `CLICK_DELAY * (p + 1)`.
pub const CLICK_DELAY: i64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickParams {
    pub affinity_weight: f64,
    /// Affinity at which the sigmoid is centered.
    pub affinity_offset: f64,
    pub freshness_half_life_hours: f64,
    /// Click probability at zero affinity for a fresh, average-quality article.
    pub base_rate: f64,
    /// Log-normal spread of the per-article quality multiplier (mean 1).
    pub quality_sigma: f64,
}

impl Default for ClickParams {
    fn default() -> Self {
        Self {
            affinity_weight: 8.0,
            affinity_offset: 0.5,
            freshness_half_life_hours: 2.0,
            base_rate: 0.02,
            quality_sigma: 1.0,
        }
    }
}

/// The popularity-sorted slate shown by the logging system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingPolicy {
    pub slate_size: usize,
    /// Gumbel noise scale added to the log smoothed CTR.
    pub noise: f64,
    pub prior_clicks: f64,
    pub prior_impressions: f64,
}

impl Default for LoggingPolicy {
    fn default() -> Self {
        Self {
            slate_size: 10,
            noise: 1.0,
            prior_clicks: 1.0,
            prior_impressions: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub num_topics: usize,
    pub vocab_size: usize,
    pub d: usize,
    pub num_users: usize,
    pub num_articles: usize,
    pub days: u32,
    pub start_ts: Timestamp,
    pub tokens_per_article: usize,
    /// Share of article tokens drawn from the whole vocabulary.
    pub background_share: f64,
    /// Per-component Gaussian noise added to a word's topic vector.
    pub word_noise: f64,
    /// Articles stay available this long after publication.
    pub expiry_hours: i64,
    pub visits_per_day_median: f64,
    pub visits_per_day_sigma: f64,
    /// Users never have two sessions closer than this.
    pub min_session_gap: i64,
    pub dominant_share_min: f64,
    pub dominant_share_max: f64,
    pub secondary_topics: usize,
    pub click: ClickParams,
    pub policy: LoggingPolicy,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            num_topics: 12,
            vocab_size: 2400,
            d: 64,
            num_users: 2000,
            num_articles: 5000,
            days: 7,
            start_ts: 1_699_920_000,
            tokens_per_article: 30,
            background_share: 0.2,
            word_noise: 0.1,
            expiry_hours: 48,
            visits_per_day_median: 24.0,
            visits_per_day_sigma: 1.0,
            min_session_gap: 600,
            dominant_share_min: 0.5,
            dominant_share_max: 0.9,
            secondary_topics: 2,
            click: ClickParams::default(),
            policy: LoggingPolicy::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidSpec(m.to_string()));
        if self.num_topics == 0 || self.d == 0 || self.num_users == 0 || self.num_articles == 0 || self.days == 0 {
            return bad("num_topics, d, num_users, num_articles and days must be positive");
        }
        if self.vocab_size < self.num_topics {
            return bad("vocab_size must be at least num_topics");
        }
        if self.tokens_per_article == 0 || self.expiry_hours <= 0 || self.policy.slate_size == 0 {
            return bad("tokens_per_article, expiry_hours and slate_size must be positive");
        }
        if !(self.click.base_rate > 0.0 && self.click.base_rate < 1.0) {
            return bad("base_rate must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.background_share) {
            return bad("background_share must lie in [0, 1]");
        }
        if !(self.word_noise >= 0.0 && self.click.quality_sigma >= 0.0 && self.visits_per_day_sigma >= 0.0) {
            return bad("noise and spread parameters must be non-negative");
        }
        if !(self.visits_per_day_median >= 0.0 && self.click.freshness_half_life_hours > 0.0) {
            return bad("visit rate must be non-negative and the half-life positive");
        }
        if !(0.0 < self.dominant_share_min && self.dominant_share_min <= self.dominant_share_max && self.dominant_share_max <= 1.0) {
            return bad("dominant share bounds must satisfy 0 < min <= max <= 1");
        }
        if self.secondary_topics >= self.num_topics {
            return bad("secondary_topics must be less than num_topics");
        }
        if !(self.policy.prior_clicks > 0.0 && self.policy.prior_impressions > 0.0 && self.policy.noise >= 0.0) {
            return bad("policy priors must be positive and the noise non-negative");
        }
        if self.min_session_gap < 0 {
            return bad("min_session_gap must be non-negative");
        }
        Ok(())
    }

    pub fn end_ts(&self) -> Timestamp {
        self.start_ts + i64::from(self.days) * DAY
    }
}

/// A simulated user with ground-truth preferences and visit schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimUser {
    pub user_id: String,
    pub dominant_topic: usize,
    /// Sums to 1 over topics.
    pub topic_weights: Vec<f64>,
    pub visits_per_day: f64,
    #[serde(skip)]
    pub preference: Vec<f64>,
    #[serde(skip)]
    pub sessions: Vec<Timestamp>,
}

pub struct World {
    pub spec: WorldSpec,
    pub topics: Vec<Vec<f64>>,
    pub embeddings: EmbeddingTable,
    /// Word `i` is named `vocab[i]` and belongs to topic `i % num_topics`.
    pub vocab: Vec<String>,
    /// Publication order; ids follow it.
    pub articles: Vec<ArticleLine>,
    pub idf: IdfTable,
    pub article_vectors: Vec<Option<Vec<f64>>>,
    pub quality: Vec<f64>,
    pub users: Vec<SimUser>,
    article_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
}

impl World {
    pub fn article_idx(&self, article_id: &str) -> Option<usize> {
        self.article_index.get(article_id).copied()
    }

    pub fn user_idx(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn topic_of_word(&self, word: usize) -> usize {
        word % self.spec.num_topics
    }

    /// Index range of articles with `from < published_at <= to`.
    pub fn published_range(&self, from: Timestamp, to: Timestamp) -> std::ops::Range<usize> {
        let lo = self.articles.partition_point(|a| a.published_at <= from);
        let hi = self.articles.partition_point(|a| a.published_at <= to);
        lo..hi.max(lo)
    }

    pub fn click_model(&self) -> ClickModel<'_> {
        ClickModel { world: self }
    }
}

fn round_to(x: f64, decimals: usize) -> f64 {
    let s = 10f64.powi(decimals as i32);
    let r = (x * s).round() / s;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn stream(seed: u64, tag: u64) -> SeededRng {
    seeded(mix64(seed ^ mix64(tag)))
}

fn gaussian_unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        if let Some(u) = normalize(v) {
            return u;
        }
    }
}

pub fn generate_world(spec: &WorldSpec) -> Result<World, DatagenError> {
    spec.validate()?;
    let t = spec.num_topics;
    let d = spec.d;

    let mut rng = stream(spec.seed, 1);
    let raw_topics: Vec<Vec<f64>> = (0..t).map(|_| gaussian_unit(&mut rng, d)).collect();
    let topics: Vec<Vec<f64>> = raw_topics
        .iter()
        .map(|v| v.iter().map(|x| round_to(*x, EMBEDDING_DECIMALS)).collect())
        .collect();

    let mut rng = stream(spec.seed, 2);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut embeddings = EmbeddingTable::new(d).map_err(|e| DatagenError::InvalidSpec(e.to_string()))?;
    let vocab: Vec<String> = (0..spec.vocab_size).map(|i| format!("w{i:05}")).collect();
    for (i, word) in vocab.iter().enumerate() {
        let topic = &raw_topics[i % t];
        let v = if spec.word_noise == 0.0 {
            topics[i % t].clone()
        } else {
            let noisy: Vec<f64> = topic.iter().map(|x| x + spec.word_noise * noise.sample(&mut rng)).collect();
            normalize(noisy)
                .unwrap_or_else(|| topic.clone())
                .into_iter()
                .map(|x| round_to(x, EMBEDDING_DECIMALS))
                .collect()
        };
        embeddings.insert(word.clone(), v).expect("dimension matches");
    }

    let mut rng = stream(spec.seed, 3);
    let span = spec.end_ts() - spec.start_ts;
    let mut drafts: Vec<(Timestamp, usize, Vec<String>)> = (0..spec.num_articles)
        .map(|_| {
            let published_at = spec.start_ts + rng.random_range(0..span);
            let topic = rng.random_range(0..t);
            let per_topic = (spec.vocab_size - topic).div_ceil(t);
            let tokens = (0..spec.tokens_per_article)
                .map(|_| {
                    let w = if unit_f64(&mut rng) < spec.background_share {
                        rng.random_range(0..spec.vocab_size)
                    } else {
                        topic + t * rng.random_range(0..per_topic)
                    };
                    vocab[w].clone()
                })
                .collect();
            (published_at, topic, tokens)
        })
        .collect();
    drafts.sort_by_key(|(ts, _, _)| *ts);
    let articles: Vec<ArticleLine> = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (published_at, topic, tokens))| ArticleLine {
            article_id: format!("a{i:05}"),
            published_at,
            topic: Some(topic),
            tokens,
        })
        .collect();
    let idf = build_idf(articles.iter().map(|a| a.tokens.iter())).map_err(|e| DatagenError::InvalidSpec(e.to_string()))?;
    let article_vectors = articles
        .iter()
        .map(|a| article_vector(&a.tokens, &embeddings, &idf, TokenWeighting::PerOccurrence))
        .collect();
    let quality_dist = Normal::new(-spec.click.quality_sigma.powi(2) / 2.0, spec.click.quality_sigma).expect("finite sigma");
    let mut rng = stream(spec.seed, 4);
    let quality = (0..articles.len()).map(|_| quality_dist.sample(&mut rng).exp()).collect();

    let mut rng = stream(spec.seed, 5);
    let users = (0..spec.num_users)
        .map(|i| make_user(spec, &raw_topics, format!("u{i:05}"), &mut rng))
        .collect::<Vec<_>>();

    let article_index = articles.iter().enumerate().map(|(i, a)| (a.article_id.clone(), i)).collect();
    let user_index = users.iter().enumerate().map(|(i, u)| (u.user_id.clone(), i)).collect();
    Ok(World {
        spec: spec.clone(),
        topics,
        embeddings,
        vocab,
        articles,
        idf,
        article_vectors,
        quality,
        users,
        article_index,
        user_index,
    })
}

fn make_user(spec: &WorldSpec, topics: &[Vec<f64>], user_id: String, rng: &mut SeededRng) -> SimUser {
    let t = spec.num_topics;
    let dominant = rng.random_range(0..t);
    let share = spec.dominant_share_min + (spec.dominant_share_max - spec.dominant_share_min) * unit_f64(rng);
    let mut weights = vec![0.0; t];
    weights[dominant] = share;
    let mut others: Vec<usize> = (0..t).filter(|&x| x != dominant).collect();
    let mut picked = Vec::with_capacity(spec.secondary_topics);
    for _ in 0..spec.secondary_topics {
        let j = rng.random_range(0..others.len());
        picked.push(others.swap_remove(j));
    }
    let raw: Vec<f64> = picked.iter().map(|_| 0.1 + unit_f64(rng)).collect();
    let total: f64 = raw.iter().sum();
    for (topic, r) in picked.iter().zip(&raw) {
        weights[*topic] = (1.0 - share) * r / total;
    }
    if picked.is_empty() {
        weights[dominant] = 1.0;
    }
    let mut pref = vec![0.0; spec.d];
    for (w, topic) in weights.iter().zip(topics) {
        for (p, x) in pref.iter_mut().zip(topic) {
            *p += w * x;
        }
    }
    let preference = normalize(pref).unwrap_or_else(|| topics[dominant].clone());

    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    let visits_per_day = if spec.visits_per_day_median > 0.0 {
        spec.visits_per_day_median * (spec.visits_per_day_sigma * z).exp()
    } else {
        0.0
    };
    let mean = visits_per_day * f64::from(spec.days);
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let span = spec.end_ts() - spec.start_ts;
    let mut times: Vec<Timestamp> = (0..count).map(|_| spec.start_ts + rng.random_range(0..span)).collect();
    times.sort_unstable();
    let mut sessions: Vec<Timestamp> = Vec::with_capacity(times.len());
    for ts in times {
        if sessions.last().is_none_or(|&last| ts - last >= spec.min_session_gap.max(1)) {
            sessions.push(ts);
        }
    }
    SimUser {
        user_id,
        dominant_topic: dominant,
        topic_weights: weights,
        visits_per_day,
        preference,
        sessions,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Click probabilities and deterministic per-(user, article, session) draws.
///
/// Freshness counts age from the user's previous visit when there is one:
/// an article published since then is new to the user.
#[derive(Clone, Copy)]
pub struct ClickModel<'w> {
    world: &'w World,
}

impl ClickModel<'_> {
    pub fn affinity(&self, user: usize, article: usize) -> f64 {
        match &self.world.article_vectors[article] {
            Some(v) => dot(&self.world.users[user].preference, v),
            None => 0.0,
        }
    }

    pub fn freshness(&self, article: usize, now: Timestamp, prev_visit: Option<Timestamp>) -> f64 {
        let published = self.world.articles[article].published_at;
        let reference = prev_visit.unwrap_or(now).min(now);
        let age_hours = (reference - published).max(0) as f64 / HOUR as f64;
        (-std::f64::consts::LN_2 * age_hours / self.world.spec.click.freshness_half_life_hours).exp()
    }

    pub fn probability(&self, user: usize, article: usize, now: Timestamp, prev_visit: Option<Timestamp>) -> f64 {
        let c = &self.world.spec.click;
        let x = self.affinity(user, article);
        let lift = logistic(c.affinity_weight * (x - c.affinity_offset)) / logistic(-c.affinity_weight * c.affinity_offset);
        let p = c.base_rate * lift * self.freshness(article, now, prev_visit) * self.world.quality[article];
        p.clamp(0.0, 1.0)
    }

    /// Uniform draw shared by every policy that shows `article` to `user` in the session at `session_ts`.
    pub fn draw(&self, user: usize, article: usize, session_ts: Timestamp) -> f64 {
        let h = mix64(
            self.world.spec.seed
                ^ mix64(fnv1a(&self.world.users[user].user_id))
                ^ mix64(fnv1a(&self.world.articles[article].article_id).rotate_left(17))
                ^ mix64(session_ts as u64).rotate_left(31),
        );
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn clicks(&self, user: usize, article: usize, session_ts: Timestamp, prev_visit: Option<Timestamp>) -> bool {
        self.draw(user, article, session_ts) < self.probability(user, article, session_ts, prev_visit)
    }
}

/// Timestamp of the click on slate position `pos`, kept inside the session's hour.
pub fn click_ts(session_ts: Timestamp, pos: usize, start_ts: Timestamp) -> Timestamp {
    let hour_end = start_ts + (session_ts - start_ts).div_euclid(HOUR) * HOUR + HOUR;
    (session_ts + CLICK_DELAY * (pos as i64 + 1)).min(hour_end - 1)
}

/// Every session of every user as `(ts, user index)`, sorted.
pub fn session_schedule(world: &World) -> Vec<(Timestamp, usize)> {
    let mut out: Vec<(Timestamp, usize)> = world
        .users
        .iter()
        .enumerate()
        .flat_map(|(u, user)| user.sessions.iter().map(move |&ts| (ts, u)))
        .collect();
    out.sort_unstable();
    out
}

/// Appends one session's events and returns the number of clicks.
pub fn emit_session(
    events: &mut Vec<BehaviorEvent>,
    seq: &mut u64,
    world: &World,
    user: usize,
    ts: Timestamp,
    slate: &[usize],
    clicked: &[bool],
) -> usize {
    let user_id = &world.users[user].user_id;
    let mut push = |kind, article: Option<usize>, at| {
        events.push(BehaviorEvent {
            kind,
            user_id: user_id.clone(),
            article_id: article.map(|a| world.articles[a].article_id.clone()),
            ts: at,
            seq: *seq,
        });
        *seq += 1;
    };
    push(EventKind::Access, None, ts);
    for &a in slate {
        push(EventKind::Impression, Some(a), ts);
    }
    let mut n = 0;
    for (pos, (&a, &c)) in slate.iter().zip(clicked).enumerate() {
        if c {
            push(EventKind::Click, Some(a), click_ts(ts, pos, world.spec.start_ts));
            n += 1;
        }
    }
    n
}

pub fn sort_events(events: &mut [BehaviorEvent]) {
    events.sort_by(|a, b| (a.ts, &a.user_id, a.seq).cmp(&(b.ts, &b.user_id, b.seq)));
}

/// Logs produced by the popularity logging policy.
pub fn simulate_logs(world: &World) -> Vec<BehaviorEvent> {
    let spec = &world.spec;
    let policy = &spec.policy;
    let model = world.click_model();
    let mut rng = stream(spec.seed, 6);
    let mut imps = vec![0u64; world.articles.len()];
    let mut clicks = vec![0u64; world.articles.len()];
    let mut seqs = vec![0u64; world.users.len()];
    let mut prev: Vec<Option<Timestamp>> = vec![None; world.users.len()];
    let mut read: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); world.users.len()];
    let mut events = Vec::new();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    let mut flags = Vec::new();
    for (ts, user) in session_schedule(world) {
        let range = world.published_range(ts - spec.expiry_hours * HOUR, ts);
        scored.clear();
        for a in range {
            let g = if policy.noise > 0.0 {
                let u = unit_f64(&mut rng).max(f64::MIN_POSITIVE);
                -policy.noise * (-u.ln()).ln()
            } else {
                0.0
            };
            let rate = (clicks[a] as f64 + policy.prior_clicks) / (imps[a] as f64 + policy.prior_impressions);
            scored.push((rate.ln() + g, a));
        }
        let n = policy.slate_size.min(scored.len());
        if n == 0 {
            let mut seq = seqs[user];
            emit_session(&mut events, &mut seq, world, user, ts, &[], &[]);
            seqs[user] = seq;
            prev[user] = Some(ts);
            continue;
        }
        let by_score = |x: &(f64, usize), y: &(f64, usize)| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1));
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, by_score);
            scored.truncate(n);
        }
        scored.sort_by(by_score);
        let slate: Vec<usize> = scored.iter().map(|(_, a)| *a).collect();
        flags.clear();
        flags.extend(slate.iter().map(|&a| !read[user].contains(&a) && model.clicks(user, a, ts, prev[user])));
        read[user].extend(slate.iter().zip(&flags).filter(|(_, &c)| c).map(|(&a, _)| a));
        for (&a, &c) in slate.iter().zip(&flags) {
            imps[a] += 1;
            clicks[a] += u64::from(c);
        }
        let mut seq = seqs[user];
        emit_session(&mut events, &mut seq, world, user, ts, &slate, &flags);
        seqs[user] = seq;
        prev[user] = Some(ts);
    }
    sort_events(&mut events);
    events
}

/// One segment per hour of the world's span, half-open `[hour_start, hour_start + 1h)`.
pub fn export_segments(events: &[BehaviorEvent], world: &World) -> Vec<HourSegment> {
    let spec = &world.spec;
    let hours = i64::from(spec.days) * 24;
    let mut segments: Vec<HourSegment> = (0..hours)
        .map(|h| {
            let hour_start = spec.start_ts + h * HOUR;
            let hour_end = hour_start + HOUR;
            let candidates_all = world
                .articles
                .iter()
                .filter(|a| a.published_at < hour_end && a.published_at + spec.expiry_hours * HOUR > hour_start)
                .map(|a| a.article_id.clone())
                .collect();
            HourSegment {
                hour_start,
                candidates_all,
                per_user_displayed: BTreeMap::new(),
                per_user_clicked: BTreeMap::new(),
            }
        })
        .collect();
    let mut shown: Vec<BTreeMap<&str, BTreeSet<&str>>> = vec![BTreeMap::new(); segments.len()];
    for e in events {
        let h = (e.ts - spec.start_ts).div_euclid(HOUR);
        if h < 0 || h >= hours {
            continue;
        }
        let h = h as usize;
        let Some(article) = e.article_id.as_deref() else {
            continue;
        };
        match e.kind {
            EventKind::Impression => {
                if shown[h].entry(&e.user_id).or_default().insert(article) {
                    segments[h]
                        .per_user_displayed
                        .entry(e.user_id.clone())
                        .or_default()
                        .push(article.to_string());
                }
            }
            EventKind::Click => {
                segments[h]
                    .per_user_clicked
                    .entry(e.user_id.clone())
                    .or_default()
                    .insert(article.to_string());
            }
            EventKind::Access => {}
        }
    }
    segments
}

/// Writes `world.toml`, `embeddings.txt`, `idf.txt`, `articles.jsonl`,
/// `users.jsonl`, `events.jsonl` and `segments.jsonl` into `dir`.
pub fn write_world_files(
    dir: &Path,
    world: &World,
    events: &[BehaviorEvent],
    segments: &[HourSegment],
) -> Result<(), DatagenError> {
    fs::create_dir_all(dir)?;
    let create = |name: &str| -> std::io::Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };

    let mut w = create("world.toml")?;
    w.write_all(toml::to_string(&world.spec).map_err(|e| DatagenError::InvalidSpec(e.to_string()))?.as_bytes())?;
    w.flush()?;

    let mut w = create("embeddings.txt")?;
    write_embeddings_fixed(&mut w, &world.embeddings, EMBEDDING_DECIMALS)?;
    w.flush()?;

    let mut w = create("idf.txt")?;
    write_idf(&mut w, &world.idf)?;
    w.flush()?;

    let mut w = create("articles.jsonl")?;
    write_articles(&mut w, &world.articles)?;
    w.flush()?;

    let mut w = create("users.jsonl")?;
    for u in &world.users {
        let line = UserLine {
            user_id: &u.user_id,
            dominant_topic: u.dominant_topic,
            topic_weights: u.topic_weights.iter().map(|x| format!("{x:.6}")).collect(),
            visits_per_day: format!("{:.6}", u.visits_per_day),
            sessions: u.sessions.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("user serializes"))?;
    }
    w.flush()?;

    let mut w = create("events.jsonl")?;
    write_events(&mut w, events)?;
    w.flush()?;

    let mut w = create("segments.jsonl")?;
    write_segments(&mut w, segments)?;
    w.flush()?;
    Ok(())
}

/// The files written by [`write_world_files`], loaded back.
pub struct WorldDir {
    pub spec: WorldSpec,
    pub catalog: crate::catalog::Catalog,
    pub events: Vec<BehaviorEvent>,
    pub segments: Vec<HourSegment>,
    /// Event lines that failed to parse and were skipped.
    pub bad_event_lines: usize,
}

pub fn load_world_dir(dir: &Path) -> Result<WorldDir, DatagenError> {
    use std::io::BufReader;
    let open = |name: &str| -> std::io::Result<BufReader<File>> {
        File::open(dir.join(name))
            .map(BufReader::new)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display())))
    };
    let spec_text = fs::read_to_string(dir.join("world.toml"))
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", dir.join("world.toml").display())))?;
    let spec: WorldSpec = toml::from_str(&spec_text).map_err(|e| DatagenError::InvalidSpec(e.to_string()))?;
    let embeddings = crate::formats::read_embeddings(open("embeddings.txt")?)?;
    let idf = crate::formats::read_idf(open("idf.txt")?)?;
    let articles = crate::events::read_articles(open("articles.jsonl")?)?;
    let catalog = crate::catalog::Catalog::from_lines(&articles, &embeddings, &idf, TokenWeighting::PerOccurrence);
    let (events, bad) = crate::events::read_events(open("events.jsonl")?)?;
    let segments = crate::events::read_segments(open("segments.jsonl")?)?;
    Ok(WorldDir {
        spec,
        catalog,
        events,
        segments,
        bad_event_lines: bad.len(),
    })
}

#[derive(Serialize)]
struct UserLine<'a> {
    user_id: &'a str,
    dominant_topic: usize,
    topic_weights: Vec<String>,
    visits_per_day: String,
    sessions: usize,
}
