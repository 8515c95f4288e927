use std::collections::BTreeMap;

use newsrec_core::profile::{ArticleVectors, HistoryPolicy, UserProfile};
use newsrec_core::rng::{index, seeded, unit_f64};
use newsrec_core::vector::{is_unit, normalize};
use proptest::prelude::*;

struct Lookup(BTreeMap<String, Vec<f64>>);

impl ArticleVectors for Lookup {
    fn article_vector(&self, id: &str) -> Option<&[f64]> {
        self.0.get(id).map(Vec::as_slice)
    }
    fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }
}

fn lookup(seed: u64) -> Lookup {
    let mut rng = seeded(seed);
    Lookup(
        (0..15)
            .filter_map(|i| {
                let v: Vec<f64> = (0..5).map(|_| unit_f64(&mut rng) - 0.5).collect();
                normalize(v).map(|v| (format!("a{i}"), v))
            })
            .collect(),
    )
}

proptest! {
    #[test]
    fn history_bounded_and_vector_consistent(seed in any::<u64>(), n in 1usize..200, cap in 1usize..20, dedup in any::<bool>()) {
        let l = lookup(seed);
        let policy = HistoryPolicy { capacity: cap, dedup };
        let mut rng = seeded(seed ^ 1);
        let mut p = UserProfile::new("u");
        let mut last = None;
        for step in 0..n {
            // Ids a15..a19 are unknown to the lookup.
            let id = format!("a{}", index(&mut rng, 20));
            let ts = index(&mut rng, 1000) as i64;
            if index(&mut rng, 4) == 0 {
                p.apply_access(ts);
            } else {
                p.apply_click(&id, ts, &policy, &l);
            }
            prop_assert!(p.history.len() <= cap, "step {}", step);
            let mut fresh = p.clone();
            fresh.recompute_vector(&l);
            match (&p.vector, &fresh.vector) {
                (Some(a), Some(b)) => {
                    prop_assert!(is_unit(a, 1e-6));
                    prop_assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6));
                }
                (None, None) => {}
                _ => prop_assert!(false, "vector out of sync"),
            }
            if let (Some(prev), Some(now)) = (last, p.last_access_at) {
                prop_assert!(now >= prev);
            }
            last = p.last_access_at;
        }
    }
}
