#![allow(dead_code)]

use std::collections::BTreeMap;

use newsrec::catalog::Catalog;
use newsrec::datagen::{generate_world, simulate_logs, World, WorldSpec};
use newsrec_core::cluster::{ClusterModel, ModelBody};
use newsrec_core::rng::{seeded, unit_f64, SeededRng};
use newsrec_core::vector::normalize;
use newsrec_core::vectorizer::TokenWeighting;
use newsrec_core::{BehaviorEvent, Cell, EventKind, Timestamp};

pub fn small_spec(seed: u64) -> WorldSpec {
    WorldSpec {
        seed,
        num_users: 120,
        num_articles: 300,
        vocab_size: 480,
        days: 2,
        visits_per_day_median: 6.0,
        ..WorldSpec::default()
    }
}

pub fn small_world(seed: u64) -> (World, Vec<BehaviorEvent>) {
    let world = generate_world(&small_spec(seed)).expect("valid spec");
    let log = simulate_logs(&world);
    (world, log)
}

pub fn catalog_of(world: &World) -> Catalog {
    Catalog::from_lines(&world.articles, &world.embeddings, &world.idf, TokenWeighting::PerOccurrence)
}

pub fn unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    loop {
        if let Some(v) = normalize((0..d).map(|_| unit_f64(rng) * 2.0 - 1.0).collect()) {
            return v;
        }
    }
}

pub fn random_kmeans(seed: u64, k: usize, d: usize, version: u64) -> ClusterModel {
    let mut rng = seeded(seed);
    ClusterModel {
        version,
        k,
        assignments: BTreeMap::new(),
        body: ModelBody::KMeans {
            centroids: (0..k).map(|_| unit(&mut rng, d)).collect(),
        },
    }
}

/// Profile rebuilt from scratch: the last `capacity` clicks, their plain
/// vector average, and the latest event time.
#[derive(Debug, Clone, Default)]
pub struct Recount {
    pub history: Vec<String>,
    pub last_access: Option<Timestamp>,
}

impl Recount {
    pub fn vector(&self, catalog: &Catalog) -> Option<Vec<f64>> {
        let vs: Vec<&Vec<f64>> = self
            .history
            .iter()
            .filter_map(|a| catalog.get(a).and_then(|r| r.vector.as_ref()))
            .collect();
        let first = vs.first()?;
        let mut acc = vec![0.0; first.len()];
        for v in &vs {
            for (x, y) in acc.iter_mut().zip(v.iter()) {
                *x += y;
            }
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(acc.into_iter().map(|x| x / n).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> usize {
    let dist = |c: &Vec<f64>| v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut best = 0;
    for (i, c) in centroids.iter().enumerate() {
        if dist(c) < dist(&centroids[best]) {
            best = i;
        }
    }
    best
}

pub struct BruteForce {
    pub profiles: BTreeMap<String, Recount>,
    /// `(window index, cluster, article) → cell`.
    pub windows: BTreeMap<(i64, usize, String), Cell>,
}

/// Replays `events` in order with a direct transcription of the update rules.
pub fn brute_force(
    events: &[BehaviorEvent],
    catalog: &Catalog,
    capacity: usize,
    model: Option<(&ClusterModel, Timestamp, i64)>,
) -> BruteForce {
    let mut profiles: BTreeMap<String, Recount> = BTreeMap::new();
    let mut windows: BTreeMap<(i64, usize, String), Cell> = BTreeMap::new();
    for e in events {
        let p = profiles.entry(e.user_id.clone()).or_default();
        if let (Some((m, start, len)), Some(article), EventKind::Impression | EventKind::Click) = (model, &e.article_id, e.kind) {
            let ModelBody::KMeans { centroids } = &m.body else { panic!("k-means model expected") };
            if let Some(v) = p.vector(catalog) {
                let cell = windows
                    .entry(((e.ts - start).div_euclid(len), nearest(&v, centroids), article.clone()))
                    .or_default();
                match e.kind {
                    EventKind::Impression => cell.impressions += 1,
                    _ => cell.clicks += 1,
                }
            }
        }
        match e.kind {
            EventKind::Click => {
                p.history.push(e.article_id.clone().expect("click has an article"));
                if p.history.len() > capacity {
                    p.history.remove(0);
                }
                p.last_access = Some(p.last_access.map_or(e.ts, |t| t.max(e.ts)));
            }
            EventKind::Access => p.last_access = Some(p.last_access.map_or(e.ts, |t| t.max(e.ts))),
            EventKind::Impression => {}
        }
    }
    profiles.retain(|_, p| !p.history.is_empty() || p.last_access.is_some());
    BruteForce { profiles, windows }
}

impl BruteForce {
    /// Cells of the `merge` windows that closed last before `now`.
    pub fn merged(&self, start: Timestamp, len: i64, merge: usize, now: Timestamp) -> BTreeMap<(usize, String), Cell> {
        let closed_until = (now - start).div_euclid(len);
        let from = closed_until - merge as i64;
        let mut out: BTreeMap<(usize, String), Cell> = BTreeMap::new();
        for ((w, c, a), cell) in &self.windows {
            if *w >= from && *w < closed_until {
                let e = out.entry((*c, a.clone())).or_default();
                e.impressions += cell.impressions;
                e.clicks += cell.clicks;
            }
        }
        out
    }
}
