//! Single-threaded recommend latency on a synthetic snapshot.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use newsrec_core::cluster::ModelBody;
use newsrec_core::rng::{index, seeded, unit_f64};
use newsrec_core::vector::normalize;
use newsrec_core::{ArticleRecord, Cell, ClusterModel, CtrTable, HistoryPolicy, Timestamp};
use serde::Serialize;

use crate::catalog::Catalog;
use crate::pipeline::Pipeline;
use crate::service::{RecService, ServiceConfig};
use crate::store::{MemoryStore, ProfileStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchParams {
    pub candidates: usize,
    pub k: usize,
    pub d: usize,
    pub users: usize,
    pub warmup: usize,
    pub requests: usize,
    pub m: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            candidates: 10_000,
            k: 50,
            d: 64,
            users: 1_000,
            warmup: 1_000,
            requests: 10_000,
            m: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub candidates: usize,
    pub pool_size: usize,
    pub k: usize,
    pub d: usize,
    pub requests: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

fn unit(rng: &mut newsrec_core::rng::SeededRng, d: usize) -> Vec<f64> {
    loop {
        if let Some(v) = normalize((0..d).map(|_| unit_f64(rng) * 2.0 - 1.0).collect()) {
            return v;
        }
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn run_bench(p: &BenchParams) -> BenchReport {
    let mut rng = seeded(p.seed);
    let now: Timestamp = 1_700_000_000;
    let articles: Vec<ArticleRecord> = (0..p.candidates)
        .map(|i| {
            let mut a = ArticleRecord::new(format!("a{i:06}"), now - index(&mut rng, 47 * 3600) as i64, Vec::new());
            a.vector = Some(unit(&mut rng, p.d));
            a
        })
        .collect();
    let catalog = Arc::new(Catalog::new(articles));
    let centroids: Vec<Vec<f64>> = (0..p.k).map(|_| unit(&mut rng, p.d)).collect();
    let model = Arc::new(ClusterModel {
        version: 1,
        k: p.k,
        assignments: BTreeMap::new(),
        body: ModelBody::KMeans { centroids },
    });
    let mut table = CtrTable::new(p.k, 1, now - 4 * 3600, now).expect("positive window");
    for a in catalog.articles() {
        for c in 0..p.k {
            let impressions = 1 + index(&mut rng, 200) as u64;
            let clicks = index(&mut rng, impressions as usize / 4 + 1) as u64;
            table.add_cell(c, &a.article_id, Cell { impressions, clicks }).expect("cluster in range");
        }
    }

    let store = Arc::new(MemoryStore::new());
    let users: Vec<String> = (0..p.users).map(|i| format!("u{i:05}")).collect();
    for u in &users {
        let v = unit(&mut rng, p.d);
        store
            .update(u, &mut |prof| {
                prof.vector = Some(v.clone());
                prof.last_access_at = Some(now - 3600);
            })
            .expect("memory store");
    }
    let pipeline = Arc::new(Pipeline::new(store, Arc::clone(&catalog), HistoryPolicy::default()));
    let service = RecService::new(
        pipeline,
        ServiceConfig {
            with_breakdown: false,
            ..ServiceConfig::default()
        },
    );
    service.refresh(model, Arc::new(table), now).expect("consistent snapshot");
    let pool_size = service.snapshot().map_or(0, |s| s.pool().len());

    for i in 0..p.warmup {
        let _ = service.recommend(&users[i % users.len()], p.m, now);
    }
    let mut lat = Vec::with_capacity(p.requests);
    for i in 0..p.requests {
        let t = Instant::now();
        let r = service.recommend(&users[i % users.len()], p.m, now).expect("snapshot installed");
        lat.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(r);
    }
    let mean = lat.iter().sum::<f64>() / lat.len().max(1) as f64;
    lat.sort_by(f64::total_cmp);
    BenchReport {
        candidates: p.candidates,
        pool_size,
        k: p.k,
        d: p.d,
        requests: p.requests,
        p50_ms: percentile(&lat, 0.50),
        p99_ms: percentile(&lat, 0.99),
        mean_ms: mean,
        max_ms: lat.last().copied().unwrap_or(0.0),
    }
}
