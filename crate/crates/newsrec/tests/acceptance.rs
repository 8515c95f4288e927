//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! The long-running checks (three default-size evaluation worlds, three A/B
//! worlds) dominate the runtime; everything else finishes in seconds.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use common::{brute_force, catalog_of, cosine, random_kmeans, small_world};
use newsrec::ab::{ab_replay, AbParams, AbReport, Arm};
use newsrec::bench::{run_bench, BenchParams};
use newsrec::datagen::{export_segments, generate_world, simulate_logs, WorldSpec};
use newsrec::eval::{run_experiment, ClusterKind, EvalData, EvalParams, EvalReport, Method, Mode};
use newsrec::pipeline::{Attribution, Pipeline};
use newsrec::store::{MemoryStore, ProfileStore};
use newsrec_core::cluster::{kmeans_fit, Factorization, KMeansParams, SparseCounts};
use newsrec_core::rng::{index, seeded, unit_f64, SeededRng};
use newsrec_core::scorer::{decay_tdf, decay_utdf};
use newsrec_core::vector::is_unit;
use newsrec_core::vectorizer::{article_vector, TokenWeighting};
use newsrec_core::{
    average_precision, ndcg, rank, ArticleRecord, ClusterModel, CtrMatrix, CtrTable, DecayConfig, DecayMode, HistoryPolicy,
    Horizon, Interaction, ModelBody, RankConfig, ScoreSignal, Smoothing, UserProfile, WeightParams,
};

const TABLE1_SEEDS: [u64; 3] = [1, 2, 3];
const TABLE1_BUDGET_SECS: f64 = 15.0 * 60.0;
const TABLE2_SEEDS: [u64; 3] = [1, 2, 3];
const TABLE2_MIN_SESSIONS: u64 = 100_000;
const MIN_SEEDS: usize = 2;
const P50_LIMIT_MS: f64 = 25.0;
const P99_LIMIT_MS: f64 = 100.0;
const SCORER_FIXTURES: u64 = 1000;
const SCORE_REL_TOL: f64 = 1e-9;
const COSINE_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-9;
const AA_TOL: f64 = 0.02;

/// Published Table 1: (all MAP@10, all NDCG@10, user MAP, user NDCG), in `Method::TABLE` order.
const PAPER_TABLE1: [(f64, f64, f64, f64); 7] = [
    (0.043, 0.056, 0.436, 0.468),
    (0.077, 0.094, 0.419, 0.452),
    (0.080, 0.090, 0.324, 0.394),
    (0.085, 0.101, 0.445, 0.468),
    (0.102, 0.103, 0.371, 0.420),
    (0.084, 0.100, 0.455, 0.437),
    (0.125, 0.139, 0.467, 0.475),
];

/// Published Table 2 ratios: (CTR, Clicks/Sessions, Click Users/Sessions).
const PAPER_TABLE2: [(&str, f64, f64, f64); 3] =
    [("control", 1.0, 1.0, 1.0), ("tdf", 1.0106, 1.0332, 1.0032), ("utdf", 1.0318, 1.0576, 1.0075)];

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn record(&mut self, name: &str, pass: bool, detail: &str) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn main() -> ExitCode {
    let mut v = Verdicts { failed: 0 };

    let (table1, table1_secs) = table1_reports();
    reproducibility_statement(&mut v, &table1);
    table1_ordering(&mut v, &table1, table1_secs);
    table2_direction(&mut v);
    latency(&mut v);
    scoring_oracle(&mut v);
    pipeline_consistency(&mut v);
    metric_fixtures(&mut v);
    invariants(&mut v);
    determinism(&mut v);

    println!("{} criteria failed", v.failed);
    if v.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn table1_reports() -> (Vec<EvalReport>, f64) {
    let started = Instant::now();
    let reports = TABLE1_SEEDS
        .iter()
        .map(|&seed| {
            let world = generate_world(&WorldSpec { seed, ..WorldSpec::default() }).expect("default spec is valid");
            let log = simulate_logs(&world);
            let segments = export_segments(&log, &world);
            let catalog = catalog_of(&world);
            let data = EvalData { catalog: &catalog, events: &log, segments: &segments };
            run_experiment(&data, &Method::TABLE, &[Mode::All, Mode::User], &EvalParams::default()).expect("evaluation runs")
        })
        .collect();
    (reports, started.elapsed().as_secs_f64())
}

fn mean_row(reports: &[EvalReport], m: Method) -> [f64; 4] {
    let mut out = [0.0; 4];
    for r in reports {
        let all = r.overall(m, Mode::All).expect("all row");
        let user = r.overall(m, Mode::User).expect("user row");
        for (o, x) in out.iter_mut().zip([all.map, all.ndcg, user.map, user.ndcg]) {
            *o += x / reports.len() as f64;
        }
    }
    out
}

fn reproducibility_statement(v: &mut Verdicts, table1: &[EvalReport]) {
    println!("Absolute values come from a proprietary dataset; synthetic measurements are shown for reference only.");
    println!("{:<22} | {:>23} | {:>23}", "method", "paper all / user MAP", "measured all / user MAP");
    let mut complete = true;
    for (m, paper) in Method::TABLE.iter().zip(PAPER_TABLE1) {
        let got = mean_row(table1, *m);
        complete &= got.iter().all(|x| x.is_finite());
        println!("{:<22} | {:>11.3} / {:>9.3} | {:>11.3} / {:>9.3}", m.label(), paper.0, paper.2, got[0], got[2]);
    }
    for (arm, ctr, cps, cups) in PAPER_TABLE2 {
        println!("paper {arm:<8} CTR {ctr:.4}  Clicks/Sessions {cps:.4}  Click Users/Sessions {cups:.4}");
    }
    v.record(
        "reproducibility statement",
        complete,
        "paper absolutes listed beside synthetic measurements; directional checks below substitute for them",
    );
}

fn table1_ordering(v: &mut Verdicts, reports: &[EvalReport], secs: f64) {
    let mut comparisons: Vec<(String, usize)> = Vec::new();
    let wins = |f: &dyn Fn(&EvalReport) -> bool| reports.iter().filter(|r| f(r)).count();
    for mode in [Mode::All, Mode::User] {
        for (metric, pick) in [("MAP", 0usize), ("NDCG", 1usize)] {
            let value = |r: &EvalReport, m: Method| {
                let row = r.overall(m, mode).expect("row");
                [row.map, row.ndcg][pick]
            };
            let n = wins(&|r| {
                let best = value(r, Method::PROPOSED);
                Method::TABLE.iter().filter(|m| **m != Method::PROPOSED).all(|m| best > value(r, *m))
            });
            comparisons.push((format!("proposed best {metric} ({})", mode.as_str()), n));
        }
    }
    for kind in [ClusterKind::MinHash, ClusterKind::Nmf, ClusterKind::KMeans] {
        for (metric, pick) in [("MAP@10", 0usize), ("NDCG@10", 1usize)] {
            let n = wins(&|r| {
                let ctr = r.overall(Method::Cluster(kind, ScoreSignal::Ctr), Mode::All).expect("row");
                let clicks = r.overall(Method::Cluster(kind, ScoreSignal::Clicks), Mode::All).expect("row");
                [ctr.map, ctr.ndcg][pick] > [clicks.map, clicks.ndcg][pick]
            });
            comparisons.push((format!("{kind:?} CTR > Clicks {metric} (all)"), n));
        }
    }
    for (i, r) in reports.iter().enumerate() {
        let p = Method::PROPOSED;
        let (a, u) = (r.overall(p, Mode::All).unwrap(), r.overall(p, Mode::User).unwrap());
        println!(
            "  seed {}: proposed all {:.4}/{:.4} user {:.4}/{:.4}",
            TABLE1_SEEDS[i], a.map, a.ndcg, u.map, u.ndcg
        );
    }
    let mut ok = secs < TABLE1_BUDGET_SECS;
    let mut detail = Vec::new();
    for (name, n) in &comparisons {
        ok &= *n >= MIN_SEEDS;
        detail.push(format!("{name} {n}/{}", reports.len()));
    }
    detail.push(format!("runtime {secs:.0}s (budget {TABLE1_BUDGET_SECS:.0}s)"));
    v.record("Table 1 ordering", ok, &detail.join("; "));
}

fn table2_direction(v: &mut Verdicts) {
    let mut ordered = 0;
    let mut sessions_ok = true;
    let mut detail = Vec::new();
    for &seed in &TABLE2_SEEDS {
        let spec = WorldSpec {
            seed,
            num_users: 2500,
            visits_per_day_median: 3.0,
            visits_per_day_sigma: 1.5,
            ..WorldSpec::default()
        };
        let world = generate_world(&spec).expect("valid spec");
        let log = simulate_logs(&world);
        let arms = [Arm::Control, Arm::Tdf, Arm::Utdf];
        let r = ab_replay(&world, &log, &arms, &AbParams { assignment_seed: seed, ..AbParams::default() }).expect("replay runs");
        let ratio = |i: usize| r.arms[i].ctr_ratio;
        let sessions: u64 = r.arms.iter().map(|a| a.stats.sessions).sum();
        sessions_ok &= sessions >= TABLE2_MIN_SESSIONS;
        if ratio(2) >= ratio(1) && ratio(1) >= ratio(0) {
            ordered += 1;
        }
        detail.push(format!("seed {seed}: tdf {:.4} utdf {:.4} over {sessions} sessions", ratio(1), ratio(2)));
        print!("{}", indent(&r));
    }
    detail.push(format!("ordered in {ordered}/{}", TABLE2_SEEDS.len()));
    v.record("Table 2 direction", ordered >= MIN_SEEDS && sessions_ok, &detail.join("; "));
}

fn indent(r: &AbReport) -> String {
    r.table().lines().map(|l| format!("  {l}\n")).collect()
}

fn latency(v: &mut Verdicts) {
    let p = BenchParams::default();
    let r = run_bench(&p);
    let ok = r.p50_ms < P50_LIMIT_MS && r.p99_ms < P99_LIMIT_MS && r.requests >= 10_000 && r.pool_size == p.candidates;
    v.record(
        "latency",
        ok,
        &format!(
            "p50 {:.3} ms, p99 {:.3} ms over {} requests, {} candidates, K = {}, d = {}",
            r.p50_ms, r.p99_ms, r.requests, r.pool_size, r.k, r.d
        ),
    );
}

fn unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    common::unit(rng, d)
}

struct ScoringFixture {
    user: UserProfile,
    centroids: Vec<Vec<f64>>,
    model: ClusterModel,
    counts: BTreeMap<(usize, String), (u64, u64)>,
    table: CtrTable,
    pool: Vec<ArticleRecord>,
    cfg: RankConfig,
    m: usize,
    now: i64,
}

fn scoring_fixture(seed: u64) -> ScoringFixture {
    let mut rng = seeded(seed);
    let d = 2 + index(&mut rng, 6);
    let k = 1 + index(&mut rng, 20);
    let n = 1 + index(&mut rng, 150);
    let centroids: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, d)).collect();
    let model = ClusterModel {
        version: seed,
        k,
        assignments: BTreeMap::new(),
        body: ModelBody::KMeans { centroids: centroids.clone() },
    };
    let mut table = CtrTable::new(k, seed, 0, 3600).unwrap();
    let mut counts = BTreeMap::new();
    let mut pool = Vec::new();
    let mut ids = BTreeSet::new();
    while ids.len() < n {
        ids.insert(format!("n{:03}", index(&mut rng, 3 * n)));
    }
    for id in ids {
        // Coarse publish times so ties on score and time both occur.
        pool.push(ArticleRecord::new(id.clone(), 600 * index(&mut rng, 30) as i64, Vec::new()));
        for c in 0..k {
            if index(&mut rng, 2) == 0 {
                continue;
            }
            let imps = 1 + index(&mut rng, 5) as u64;
            let clicks = index(&mut rng, imps as usize + 1) as u64;
            for _ in 0..imps {
                table.record(Interaction::Impression, c, &id, 10).unwrap();
            }
            for _ in 0..clicks {
                table.record(Interaction::Click, c, &id, 10).unwrap();
            }
            counts.insert((c, id.clone()), (imps, clicks));
        }
    }
    let mut user = UserProfile::new("fixture");
    user.vector = Some(unit(&mut rng, d));
    user.last_access_at = if index(&mut rng, 3) == 0 { None } else { Some(600 * index(&mut rng, 40) as i64) };
    let mode = [DecayMode::None, DecayMode::Tdf, DecayMode::Utdf][index(&mut rng, 3)];
    let decay = DecayConfig {
        mode,
        threshold_seconds: 600 * index(&mut rng, 8) as i64,
        sigma: 1e5 + unit_f64(&mut rng) * 1e8,
    };
    let signal = if index(&mut rng, 2) == 0 { ScoreSignal::Ctr } else { ScoreSignal::Clicks };
    let weights = WeightParams { exponent: 1.0 + 9.0 * unit_f64(&mut rng), ..WeightParams::default() };
    ScoringFixture {
        user,
        centroids,
        model,
        counts,
        table,
        pool,
        cfg: RankConfig { decay, weights, signal, with_breakdown: false },
        m: 1 + index(&mut rng, 40),
        now: 600 * (30 + index(&mut rng, 20) as i64),
    }
}

/// Weighted cluster statistics times freshness, sorted by score, then newer, then id.
fn brute_rank(f: &ScoringFixture) -> Vec<(String, f64)> {
    let u = f.user.vector.as_ref().unwrap();
    let weights: Vec<f64> = f
        .centroids
        .iter()
        .map(|c| {
            let dist = u.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            dist.max(f.cfg.weights.eps).powf(-f.cfg.weights.exponent)
        })
        .collect();
    let freshness = |elapsed: i64| {
        let t = f.cfg.decay.threshold_seconds;
        if elapsed <= t {
            1.0
        } else {
            let x = (elapsed - t) as f64;
            (-x * x / (2.0 * f.cfg.decay.sigma)).exp().max(f64::MIN_POSITIVE)
        }
    };
    let mut rows: Vec<(f64, i64, String)> = f
        .pool
        .iter()
        .map(|a| {
            let undamped: f64 = weights
                .iter()
                .enumerate()
                .map(|(c, w)| {
                    let (imps, clicks) = f.counts.get(&(c, a.article_id.clone())).copied().unwrap_or((0, 0));
                    let stat = match f.cfg.signal {
                        ScoreSignal::Ctr if imps == 0 => 0.0,
                        ScoreSignal::Ctr => clicks as f64 / imps as f64,
                        ScoreSignal::Clicks => clicks as f64,
                    };
                    w * stat
                })
                .sum();
            let reference = match f.cfg.decay.mode {
                DecayMode::None => None,
                DecayMode::Tdf => Some(f.now),
                DecayMode::Utdf => Some(f.user.last_access_at.unwrap_or(f.now)),
            };
            let decay = reference.map_or(1.0, |t| freshness(t - a.published_at));
            (decay * undamped, a.published_at, a.article_id.clone())
        })
        .collect();
    rows.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(y.1.cmp(&x.1)).then(x.2.cmp(&y.2)));
    rows.into_iter().take(f.m).map(|(s, _, id)| (id, s)).collect()
}

fn scoring_oracle(v: &mut Verdicts) {
    let mut mismatches = Vec::new();
    for seed in 0..SCORER_FIXTURES {
        let f = scoring_fixture(seed);
        let matrix = CtrMatrix::from_table(&f.table, Smoothing::NONE);
        let got = rank(&f.user, &f.pool, &f.model, &matrix, &f.cfg, f.m, f.now).expect("rank runs");
        let want = brute_rank(&f);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, (id, s))| {
                &g.article_id == id && (g.score - s).abs() <= SCORE_REL_TOL * s.abs().max(f64::MIN_POSITIVE)
            });
        if !same {
            mismatches.push(seed);
        }
    }
    v.record(
        "scoring oracle",
        mismatches.is_empty(),
        &format!("{} of {SCORER_FIXTURES} fixtures differ {:?}", mismatches.len(), &mismatches[..mismatches.len().min(10)]),
    );
}

fn pipeline_consistency(v: &mut Verdicts) {
    const WINDOW: i64 = 3600;
    const MERGE: usize = 4;
    let mut problems = Vec::new();
    let mut users = 0;
    let mut cells = 0;
    for seed in 0..6u64 {
        let (world, log) = small_world(100 + seed);
        let catalog = Arc::new(catalog_of(&world));
        let capacity = [1, 7, 50][seed as usize % 3];
        let model = Arc::new(random_kmeans(seed, 1 + seed as usize * 2, world.spec.d, 5));
        let start = world.spec.start_ts;
        let now = log.last().map_or(start, |e| e.ts) + 1;
        let store = Arc::new(MemoryStore::new());
        let pipeline = Pipeline::new(Arc::clone(&store), Arc::clone(&catalog), HistoryPolicy { capacity, dedup: false });
        pipeline.set_attribution(Attribution::new(Arc::clone(&model), start, WINDOW, Horizon::Windows(MERGE)).unwrap());
        pipeline.replay_events(&log).expect("replay runs");

        let oracle = brute_force(&log, &catalog, capacity, Some((&model, start, WINDOW)));
        let got = store.snapshot();
        if got.len() != oracle.profiles.len() {
            problems.push(format!("seed {seed}: {} profiles vs {}", got.len(), oracle.profiles.len()));
        }
        for (user, want) in &oracle.profiles {
            users += 1;
            let Some(p) = got.get(user) else {
                problems.push(format!("seed {seed}: {user} missing"));
                continue;
            };
            let vector_ok = match (&p.vector, want.vector(&catalog)) {
                (Some(a), Some(b)) => cosine(a, &b) >= 1.0 - COSINE_TOL,
                (None, None) => true,
                _ => false,
            };
            if p.history != want.history || p.last_access_at != want.last_access || !vector_ok {
                problems.push(format!("seed {seed}: {user} differs"));
            }
        }
        let (_, table) = pipeline.ctr_snapshot(now).expect("snapshot");
        let want = oracle.merged(start, WINDOW, MERGE, now);
        let got: BTreeMap<(usize, String), _> = table.cells().map(|(c, a, cell)| ((c, a.to_string()), cell)).collect();
        cells += want.len();
        if got != want {
            problems.push(format!("seed {seed}: CTR cells differ ({} vs {})", got.len(), want.len()));
        }
    }
    v.record(
        "pipeline consistency",
        problems.is_empty(),
        &format!("{users} profiles and {cells} CTR cells checked; {}", if problems.is_empty() { "no differences".into() } else { problems.join(", ") }),
    );
}

fn metric_fixtures(v: &mut Verdicts) {
    let l2 = |r: f64| 1.0 / (r + 1.0).log2();
    // (ranked, relevant, cutoff, AP, NDCG)
    let cases: [(&[&str], &[&str], Option<usize>, f64, f64); 12] = [
        (&["a"], &["a"], None, 1.0, 1.0),
        (&["a", "b", "c"], &["a", "c"], None, (1.0 + 2.0 / 3.0) / 2.0, (1.0 + l2(3.0)) / (1.0 + l2(2.0))),
        (&["a", "b", "c", "d"], &["d"], Some(2), 0.0, 0.0),
        (&["b", "a"], &["a"], None, 0.5, 1.0 / 3f64.log2()),
        (&["b", "a", "c"], &["a", "c"], None, (0.5 + 2.0 / 3.0) / 2.0, (l2(2.0) + l2(3.0)) / (1.0 + l2(2.0))),
        (&["c", "a", "b", "x"], &["a", "b", "c"], None, 1.0, 1.0),
        (&["a", "x", "y"], &["a", "b", "c"], Some(2), 0.5, 1.0 / (1.0 + l2(2.0))),
        (&["a", "b"], &["a", "z"], None, 0.5, 1.0 / (1.0 + l2(2.0))),
        (&["x", "y", "a"], &["a"], Some(3), 1.0 / 3.0, 0.5),
        (&["x", "a", "y", "b"], &["a", "b"], Some(10), (0.5 + 0.5) / 2.0, (l2(2.0) + l2(4.0)) / (1.0 + l2(2.0))),
        (&[], &["a"], None, 0.0, 0.0),
        (&["a", "x", "b", "y", "c"], &["a", "b", "c"], Some(3), (1.0 + 2.0 / 3.0) / 3.0, (1.0 + l2(3.0)) / (1.0 + l2(2.0) + l2(3.0))),
    ];
    let mut bad = Vec::new();
    for (i, (ranked, relevant, k, ap, g)) in cases.iter().enumerate() {
        let rel: BTreeSet<String> = relevant.iter().map(|s| s.to_string()).collect();
        let got_ap = average_precision(ranked, &rel, *k).unwrap();
        let got_g = ndcg(ranked, &rel, *k).unwrap();
        if (got_ap - ap).abs() > METRIC_TOL || (got_g - g).abs() > METRIC_TOL {
            bad.push(format!("case {}: AP {got_ap} vs {ap}, NDCG {got_g} vs {g}", i + 1));
        }
    }
    let empty_rejected = average_precision(&["a"], &BTreeSet::new(), None).is_err() && ndcg(&["a"], &BTreeSet::new(), None).is_err();
    v.record(
        "metric fixtures",
        bad.is_empty() && empty_rejected,
        &if bad.is_empty() { format!("{} cases within {METRIC_TOL:e}", cases.len()) } else { bad.join("; ") },
    );
}

fn invariants(v: &mut Verdicts) {
    let mut failures: Vec<&str> = Vec::new();
    let world = generate_world(&WorldSpec::default()).expect("default spec is valid");

    // Article vectors and their invariance to idf scaling.
    let scaled = world.idf.scaled(37.5);
    let mut unit_ok = true;
    let mut scaling_ok = true;
    for a in &world.articles {
        let x = article_vector(&a.tokens, &world.embeddings, &world.idf, TokenWeighting::PerOccurrence);
        let y = article_vector(&a.tokens, &world.embeddings, &scaled, TokenWeighting::PerOccurrence);
        match (x, y) {
            (Some(x), Some(y)) => {
                unit_ok &= is_unit(&x, 1e-9);
                scaling_ok &= x.iter().zip(&y).all(|(p, q)| (p - q).abs() <= 1e-9);
            }
            (None, None) => {}
            _ => scaling_ok = false,
        }
    }
    let catalog = catalog_of(&world);
    unit_ok &= catalog.articles().iter().filter_map(|a| a.vector.as_ref()).all(|v| is_unit(v, 1e-9));
    if !unit_ok {
        failures.push("unit norm");
    }
    if !scaling_ok {
        failures.push("idf scaling");
    }

    // k-means inertia and nearest-centroid assignments.
    let mut kmeans_ok = true;
    for seed in 0..20u64 {
        let mut rng = seeded(seed);
        let n = 20 + index(&mut rng, 200);
        let users: BTreeMap<String, Vec<f64>> = (0..n).map(|i| (format!("u{i:04}"), unit(&mut rng, 8))).collect();
        let k = 1 + index(&mut rng, 12);
        let fit = kmeans_fit(&users, &KMeansParams { k, seed, max_iters: 60, tol: 0.0 }).unwrap();
        kmeans_ok &= fit.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9);
        let centroids = fit.model.centroids().unwrap();
        for (u, x) in &users {
            let d = |c: &Vec<f64>| x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let assigned = d(&centroids[fit.model.assignments[u]]);
            kmeans_ok &= centroids.iter().all(|c| assigned <= d(c));
        }
    }
    if !kmeans_ok {
        failures.push("k-means");
    }

    // NMF factors stay non-negative and the error never rises.
    let mut nmf_ok = true;
    for seed in 0..10u64 {
        let mut rng = seeded(seed);
        let dense: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..20).map(|_| if unit_f64(&mut rng) < 0.25 { (1 + index(&mut rng, 3)) as f64 } else { 0.0 }).collect())
            .collect();
        let counts = SparseCounts::from_dense(&dense);
        let mut f = Factorization::init(&counts, 4, seed);
        let mut prev = f.frobenius_error(&counts);
        for _ in 0..50 {
            f.update_h(&counts);
            f.update_w(&counts);
            let err = f.frobenius_error(&counts);
            nmf_ok &= f.w.iter().chain(&f.h).all(|x| *x >= 0.0) && err <= prev + 1e-9;
            prev = err;
        }
    }
    if !nmf_ok {
        failures.push("NMF");
    }

    // Decay monotonicity and boundary values.
    let tdf = DecayConfig::tdf();
    let utdf = DecayConfig::utdf();
    let mut decay_ok = decay_tdf(tdf.threshold_seconds, 0, &tdf) == 1.0
        && decay_tdf(tdf.threshold_seconds + 1, 0, &tdf) < 1.0
        && decay_tdf(-500, 0, &tdf) == 1.0
        && decay_utdf(Some(utdf.threshold_seconds), 0, 10 * utdf.threshold_seconds, &utdf) == 1.0
        && decay_utdf(None, 0, 50_000, &utdf) == decay_tdf(50_000, 0, &utdf)
        && decay_tdf(i64::MAX / 4, 0, &tdf) > 0.0;
    let mut prev = 1.0;
    for elapsed in (0..400).map(|i| i * 9000) {
        let x = decay_tdf(elapsed, 0, &tdf);
        decay_ok &= x <= prev && x > 0.0;
        prev = x;
    }
    if !decay_ok {
        failures.push("decay");
    }

    // Scaling every CTR leaves the ranking unchanged.
    let mut argsort_ok = true;
    for seed in 0..50u64 {
        let mut f = scoring_fixture(10_000 + seed);
        f.cfg.signal = ScoreSignal::Ctr;
        let all = f.pool.len();
        let base = CtrMatrix::from_table(&f.table, Smoothing::NONE);
        let mut scaled = base.clone();
        scaled.scale_ctr(0.0137);
        let a = rank(&f.user, &f.pool, &f.model, &base, &f.cfg, all, f.now).unwrap();
        let b = rank(&f.user, &f.pool, &f.model, &scaled, &f.cfg, all, f.now).unwrap();
        let score: BTreeMap<&str, f64> = a.iter().map(|s| (s.article_id.as_str(), s.score)).collect();
        argsort_ok &= a.iter().zip(&b).all(|(x, y)| {
            x.article_id == y.article_id || (x.score - score[y.article_id.as_str()]).abs() <= 1e-12 * x.score.abs()
        });
    }
    if !argsort_ok {
        failures.push("CTR scaling");
    }

    // A/A: two control arms on the default world.
    let log = simulate_logs(&world);
    let aa = ab_replay(&world, &log, &[Arm::Control, Arm::Control], &AbParams::default()).expect("replay runs");
    let second = &aa.arms[1];
    let ratios = [second.ctr_ratio, second.clicks_per_session_ratio, second.click_users_per_session_ratio];
    if ratios.iter().any(|r| (r - 1.0).abs() > AA_TOL) {
        failures.push("A/A");
    }

    v.record(
        "invariant suites",
        failures.is_empty(),
        &format!(
            "unit norm, idf scaling, k-means, NMF, decay, CTR scaling, A/A ratios {:.4}/{:.4}/{:.4}{}",
            ratios[0],
            ratios[1],
            ratios[2],
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    );
}

fn cli_run(dir: &Path) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let steps: [Vec<String>; 6] = [
        vec!["gen".into(), "--out".into(), p("w"), "--seed".into(), "5".into(), "--users".into(), "300".into(), "--articles".into(), "800".into(), "--days".into(), "2".into()],
        vec!["cluster".into(), "--world".into(), p("w"), "--algo".into(), "kmeans".into(), "--out".into(), p("kmeans.txt")],
        vec!["cluster".into(), "--world".into(), p("w"), "--algo".into(), "minhash".into(), "--out".into(), p("minhash.txt")],
        vec!["cluster".into(), "--world".into(), p("w"), "--algo".into(), "nmf".into(), "--out".into(), p("nmf.txt")],
        vec!["aggregate".into(), "--world".into(), p("w"), "--model".into(), p("kmeans.txt"), "--out".into(), p("ctr.txt")],
        vec!["eval".into(), "--world".into(), p("w"), "--out".into(), p("eval")],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_newsrec"))
            .args(&args)
            .env_remove("RECS_CONFIG")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(v: &mut Verdicts) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = cli_run(a.path()).and_then(|_| cli_run(b.path())) {
        v.record("determinism", false, &e);
        return;
    }
    let (x, y) = (artifacts(a.path()), artifacts(b.path()));
    let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
    let ok = differing.is_empty() && x.len() == y.len();
    v.record(
        "determinism",
        ok,
        &format!("{} artifacts from gen, cluster, aggregate and eval; differing: {differing:?}", x.len()),
    );
}
