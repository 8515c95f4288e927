//! Behavior events and the per-user click-history profile they maintain.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::vectorizer::user_vector;
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Impression,
    Click,
    Access,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Impression => "impression",
            EventKind::Click => "click",
            EventKind::Access => "access",
        }
    }
}

/// One log record. Clicks and impressions carry an article id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorEvent {
    pub kind: EventKind,
    pub user_id: String,
    pub article_id: Option<String>,
    pub ts: Timestamp,
    pub seq: u64,
}

impl BehaviorEvent {
    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            EventKind::Impression | EventKind::Click => self.article_id.is_some(),
            EventKind::Access => true,
        }
    }
}

/// Looks up article vectors by id.
pub trait ArticleVectors {
    /// `None` both for unknown articles and for articles without a vector.
    fn article_vector(&self, article_id: &str) -> Option<&[f64]>;

    fn contains(&self, article_id: &str) -> bool;
}

/// Bounds and dedup behavior of the click history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryPolicy {
    pub capacity: usize,
    /// Re-clicking an article moves it to the end instead of repeating it.
    pub dedup: bool,
}

impl Default for HistoryPolicy {
    fn default() -> Self {
        Self {
            capacity: 50,
            dedup: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClickOutcome {
    pub unknown_article: bool,
}

/// Recent clicks, their averaged vector and the last access time of one user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserProfile {
    pub user_id: String,
    /// Oldest first.
    pub history: Vec<String>,
    pub vector: Option<Vec<f64>>,
    pub last_access_at: Option<Timestamp>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            ..Default::default()
        }
    }

    /// Pushes the click, trims to capacity, recomputes the vector, and counts
    /// the click as an access.
    pub fn apply_click<L: ArticleVectors + ?Sized>(
        &mut self,
        article_id: &str,
        ts: Timestamp,
        policy: &HistoryPolicy,
        articles: &L,
    ) -> ClickOutcome {
        if policy.dedup {
            self.history.retain(|a| a != article_id);
        }
        self.history.push(String::from(article_id));
        if self.history.len() > policy.capacity {
            let excess = self.history.len() - policy.capacity;
            self.history.drain(..excess);
        }
        self.recompute_vector(articles);
        self.apply_access(ts);
        ClickOutcome {
            unknown_article: !articles.contains(article_id),
        }
    }

    /// `last_access_at = max(current, ts)`.
    pub fn apply_access(&mut self, ts: Timestamp) {
        self.last_access_at = Some(self.last_access_at.map_or(ts, |t| t.max(ts)));
    }

    /// Rebuilds the vector from the current history, skipping articles without one.
    pub fn recompute_vector<L: ArticleVectors + ?Sized>(&mut self, articles: &L) {
        self.vector = user_vector(self.history.iter().filter_map(|a| articles.article_vector(a)));
    }

    pub fn click_set(&self) -> BTreeSet<String> {
        self.history.iter().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use alloc::vec;

    struct Lookup(BTreeMap<String, Vec<f64>>);

    impl ArticleVectors for Lookup {
        fn article_vector(&self, id: &str) -> Option<&[f64]> {
            self.0.get(id).map(Vec::as_slice)
        }
        fn contains(&self, id: &str) -> bool {
            self.0.contains_key(id)
        }
    }

    fn lookup() -> Lookup {
        Lookup(
            [("a", [1.0, 0.0]), ("b", [0.0, 1.0]), ("c", [0.6, 0.8]), ("d", [-1.0, 0.0])]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_vec()))
                .collect(),
        )
    }

    #[test]
    fn push_and_trim() {
        let l = lookup();
        let policy = HistoryPolicy { capacity: 3, dedup: false };
        let mut p = UserProfile::new("u");
        for (i, a) in ["a", "b", "c", "d"].iter().enumerate() {
            p.apply_click(a, i as i64, &policy, &l);
        }
        assert_eq!(p.history, ["b", "c", "d"]);
        assert_eq!(p.last_access_at, Some(3));
    }

    #[test]
    fn first_click_sets_vector() {
        let l = lookup();
        let mut p = UserProfile::new("u");
        p.apply_click("c", 10, &HistoryPolicy::default(), &l);
        assert_eq!(p.vector, Some(vec![0.6, 0.8]));
    }

    #[test]
    fn unknown_article_is_kept_in_history() {
        let l = lookup();
        let mut p = UserProfile::new("u");
        p.apply_click("a", 1, &HistoryPolicy::default(), &l);
        let out = p.apply_click("zzz", 2, &HistoryPolicy::default(), &l);
        assert!(out.unknown_article);
        assert_eq!(p.history, ["a", "zzz"]);
        assert_eq!(p.vector, Some(vec![1.0, 0.0]));
    }

    #[test]
    fn dedup_moves_to_end() {
        let l = lookup();
        let policy = HistoryPolicy { capacity: 5, dedup: true };
        let mut p = UserProfile::new("u");
        for a in ["a", "b", "a"] {
            p.apply_click(a, 0, &policy, &l);
        }
        assert_eq!(p.history, ["b", "a"]);
    }

    #[test]
    fn access_is_monotone() {
        let mut p = UserProfile::new("u");
        p.apply_access(100);
        assert_eq!(p.last_access_at, Some(100));
        p.apply_access(90);
        assert_eq!(p.last_access_at, Some(100));
        p.apply_access(200);
        assert_eq!(p.last_access_at, Some(200));
    }

    #[test]
    fn cancelling_history_has_no_vector() {
        let l = lookup();
        let mut p = UserProfile::new("u");
        p.apply_click("a", 0, &HistoryPolicy::default(), &l);
        p.apply_click("d", 0, &HistoryPolicy::default(), &l);
        assert_eq!(p.vector, None);
    }

    #[test]
    fn event_shape() {
        let e = BehaviorEvent {
            kind: EventKind::Click,
            user_id: "u".into(),
            article_id: None,
            ts: 0,
            seq: 0,
        };
        assert!(!e.is_well_formed());
        assert_eq!(EventKind::Access.as_str(), "access");
    }
}
