mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use common::{catalog_of, cosine, small_spec};
use newsrec::datagen::{export_segments, generate_world, simulate_logs, write_world_files, ClickParams, WorldSpec, HOUR};
use newsrec::pipeline::Pipeline;
use newsrec::store::{MemoryStore, ProfileStore};
use newsrec_core::{BehaviorEvent, EventKind, HistoryPolicy};

#[test]
fn same_spec_gives_identical_files() {
    let spec = small_spec(21);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let world = generate_world(&spec).unwrap();
        let log = simulate_logs(&world);
        let segments = export_segments(&log, &world);
        write_world_files(dir.path(), &world, &log, &segments).unwrap();
    }
    for name in ["world.toml", "embeddings.txt", "idf.txt", "articles.jsonl", "users.jsonl", "events.jsonl", "segments.jsonl"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn different_seeds_give_different_worlds() {
    let a = simulate_logs(&generate_world(&small_spec(1)).unwrap());
    let b = simulate_logs(&generate_world(&small_spec(2)).unwrap());
    assert_ne!(a, b);
}

#[test]
fn zero_noise_words_equal_their_topic() {
    let spec = WorldSpec {
        num_topics: 2,
        vocab_size: 50,
        word_noise: 0.0,
        secondary_topics: 0,
        ..small_spec(5)
    };
    let world = generate_world(&spec).unwrap();
    for (i, word) in world.vocab.iter().enumerate() {
        assert_eq!(world.embeddings.get(word).unwrap(), &world.topics[i % 2][..], "{word}");
    }
}

#[test]
fn token_majority_recovers_article_topic() {
    let world = generate_world(&WorldSpec::default()).unwrap();
    let index: HashMap<&str, usize> = world.vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let mut hits = 0;
    for a in &world.articles {
        let mut counts = vec![0usize; world.spec.num_topics];
        for t in &a.tokens {
            counts[world.topic_of_word(index[t.as_str()])] += 1;
        }
        let best = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        hits += usize::from(Some(best) == a.topic);
    }
    let share = hits as f64 / world.articles.len() as f64;
    assert!(share >= 0.95, "majority topic matches for {share:.4} of articles");
}

#[test]
fn user_vectors_point_to_the_dominant_topic() {
    let world = generate_world(&WorldSpec::default()).unwrap();
    let log = simulate_logs(&world);
    let store = Arc::new(MemoryStore::new());
    Pipeline::new(Arc::clone(&store), Arc::new(catalog_of(&world)), HistoryPolicy::default())
        .replay_events(&log)
        .unwrap();
    let (mut eligible, mut recovered) = (0, 0);
    for u in &world.users {
        if u.topic_weights[u.dominant_topic] < 0.5 {
            continue;
        }
        let Some(v) = store.get(&u.user_id).and_then(|p| p.vector.clone()) else { continue };
        eligible += 1;
        let own = cosine(&v, &world.topics[u.dominant_topic]);
        let beaten = (0..world.topics.len()).any(|t| t != u.dominant_topic && cosine(&v, &world.topics[t]) >= own);
        recovered += usize::from(!beaten);
    }
    assert!(eligible >= 1500, "only {eligible} users with a vector");
    let share = recovered as f64 / eligible as f64;
    assert!(share >= 0.90, "dominant topic recovered for {share:.4} of users");
}

/// Clicks over impressions that were still clickable, i.e. not of an article the user had already clicked.
fn eligible_ctr(log: &[BehaviorEvent]) -> (f64, u64) {
    let mut read: HashMap<&str, HashSet<&str>> = HashMap::new();
    let (mut imps, mut clicks) = (0u64, 0u64);
    for e in log {
        let Some(a) = e.article_id.as_deref() else { continue };
        match e.kind {
            EventKind::Impression => imps += u64::from(!read.get(e.user_id.as_str()).is_some_and(|r| r.contains(a))),
            EventKind::Click => {
                clicks += 1;
                read.entry(&e.user_id).or_default().insert(a);
            }
            EventKind::Access => {}
        }
    }
    (clicks as f64 / imps as f64, imps)
}

#[test]
fn flat_click_model_reproduces_base_rate() {
    let spec = WorldSpec {
        num_users: 500,
        days: 2,
        visits_per_day_median: 12.0,
        click: ClickParams {
            affinity_weight: 0.0,
            freshness_half_life_hours: f64::INFINITY,
            quality_sigma: 0.0,
            ..ClickParams::default()
        },
        ..WorldSpec::default()
    };
    let world = generate_world(&spec).unwrap();
    let (ctr, imps) = eligible_ctr(&simulate_logs(&world));
    assert!(imps >= 100_000, "only {imps} impressions");
    let base = spec.click.base_rate;
    assert!((ctr - base).abs() <= 0.1 * base, "empirical CTR {ctr:.5} vs base rate {base}");
}

#[test]
fn concentrated_users_click_their_topic_more_than_they_see_it() {
    let spec = WorldSpec {
        num_users: 300,
        days: 2,
        secondary_topics: 0,
        ..WorldSpec::default()
    };
    let world = generate_world(&spec).unwrap();
    let log = simulate_logs(&world);
    let target = 1;
    let focused: BTreeSet<&str> = world
        .users
        .iter()
        .filter(|u| u.dominant_topic == target)
        .map(|u| u.user_id.as_str())
        .collect();
    assert!(!focused.is_empty());
    let mut shown = (0u64, 0u64);
    let mut clicked = (0u64, 0u64);
    for e in log.iter().filter(|e| focused.contains(e.user_id.as_str())) {
        let Some(a) = e.article_id.as_deref() else { continue };
        let on_topic = u64::from(world.articles[world.article_idx(a).unwrap()].topic == Some(target));
        let slot = if e.kind == EventKind::Click { &mut clicked } else { &mut shown };
        slot.0 += on_topic;
        slot.1 += 1;
    }
    let click_share = clicked.0 as f64 / clicked.1 as f64;
    let shown_share = shown.0 as f64 / shown.1 as f64;
    assert!(click_share > shown_share, "clicked share {click_share:.4} vs displayed share {shown_share:.4}");
}

#[test]
fn no_visits_means_no_events() {
    let spec = WorldSpec {
        visits_per_day_median: 0.0,
        ..small_spec(9)
    };
    let world = generate_world(&spec).unwrap();
    assert!(simulate_logs(&world).is_empty());
}

#[test]
fn segments_account_for_every_logged_event() {
    let spec = small_spec(13);
    let world = generate_world(&spec).unwrap();
    let log = simulate_logs(&world);
    let segments = export_segments(&log, &world);
    assert_eq!(segments.len(), spec.days as usize * 24);

    let hour = |ts: i64| (ts - spec.start_ts).div_euclid(HOUR);
    let mut shown: BTreeSet<(i64, &str, &str)> = BTreeSet::new();
    let mut clicked: BTreeMap<(i64, &str, &str), usize> = BTreeMap::new();
    for e in &log {
        let Some(a) = e.article_id.as_deref() else { continue };
        match e.kind {
            EventKind::Impression => {
                shown.insert((hour(e.ts), &e.user_id, a));
            }
            EventKind::Click => *clicked.entry((hour(e.ts), &e.user_id, a)).or_default() += 1,
            EventKind::Access => {}
        }
    }
    assert!(clicked.values().all(|&n| n == 1), "an article was clicked twice by one user in one hour");

    let mut seg_shown = BTreeSet::new();
    let mut seg_clicked = BTreeSet::new();
    let mut shown_entries = 0;
    let mut clicked_entries = 0;
    for (h, s) in segments.iter().enumerate() {
        assert_eq!(s.hour_start, spec.start_ts + h as i64 * HOUR);
        for (u, list) in &s.per_user_displayed {
            shown_entries += list.len();
            seg_shown.extend(list.iter().map(|a| (h as i64, u.as_str(), a.as_str())));
        }
        for (u, set) in &s.per_user_clicked {
            assert!(!set.is_empty(), "empty click set for {u}");
            clicked_entries += set.len();
            seg_clicked.extend(set.iter().map(|a| (h as i64, u.as_str(), a.as_str())));
        }
    }
    assert_eq!(shown_entries, seg_shown.len(), "duplicate displayed entry");
    assert_eq!(clicked_entries, seg_clicked.len(), "duplicate clicked entry");
    assert_eq!(seg_shown, shown);
    assert_eq!(seg_clicked, clicked.keys().copied().collect());
}

#[test]
fn candidates_are_published_and_unexpired() {
    let spec = small_spec(17);
    let world = generate_world(&spec).unwrap();
    let segments = export_segments(&[], &world);
    for s in &segments {
        let want: Vec<&str> = world
            .articles
            .iter()
            .filter(|a| a.published_at < s.hour_start + HOUR && a.published_at + spec.expiry_hours * HOUR > s.hour_start)
            .map(|a| a.article_id.as_str())
            .collect();
        assert_eq!(s.candidates_all.iter().map(String::as_str).collect::<Vec<_>>(), want);
        assert!(s.per_user_displayed.is_empty() && s.per_user_clicked.is_empty());
    }
}

#[test]
fn hour_boundary_event_lands_in_the_later_segment() {
    let spec = small_spec(19);
    let world = generate_world(&spec).unwrap();
    let article = world.articles[0].article_id.clone();
    let at = |ts, kind| BehaviorEvent {
        kind,
        user_id: "u00000".into(),
        article_id: Some(article.clone()),
        ts,
        seq: 0,
    };
    let boundary = spec.start_ts + 5 * HOUR;
    let segments = export_segments(&[at(boundary - 1, EventKind::Impression), at(boundary, EventKind::Click)], &world);
    assert!(segments[4].per_user_displayed.contains_key("u00000"));
    assert!(!segments[4].per_user_clicked.contains_key("u00000"));
    assert!(segments[5].per_user_clicked["u00000"].contains(&article));
    assert!(!segments[5].per_user_displayed.contains_key("u00000"));
}

#[test]
fn logged_timestamps_and_sequences_are_consistent() {
    let spec = small_spec(23);
    let world = generate_world(&spec).unwrap();
    let log = simulate_logs(&world);
    let mut seqs: HashMap<&str, Vec<u64>> = HashMap::new();
    for e in &log {
        assert!(e.ts >= spec.start_ts && e.ts < spec.end_ts());
        assert!(e.is_well_formed());
        seqs.entry(&e.user_id).or_default().push(e.seq);
    }
    for (u, s) in seqs {
        let mut sorted = s.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..s.len() as u64).collect::<Vec<_>>(), "{u}: sequence numbers have gaps");
    }
}
