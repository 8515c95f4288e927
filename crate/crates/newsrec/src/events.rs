//! JSON-lines records: behavior events, articles and hour segments.
//!
//! Event lines look like
//! `{"kind":"click","user_id":"u00001","article_id":"a00042","ts":1699920123,"seq":7}`;
//! `article_id` is omitted for access events.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use newsrec_core::{BehaviorEvent, EventKind, Timestamp};
use serde::{Deserialize, Serialize};

use crate::formats::FormatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Impression,
    Click,
    Access,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine<'a> {
    kind: Kind,
    #[serde(borrow)]
    user_id: std::borrow::Cow<'a, str>,
    #[serde(default, skip_serializing_if = "Option::is_none", borrow)]
    article_id: Option<std::borrow::Cow<'a, str>>,
    ts: Timestamp,
    seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EventError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("{0} event without article_id")]
    MissingArticle(&'static str),
}

pub fn parse_event(line: &str) -> Result<BehaviorEvent, EventError> {
    let raw: EventLine<'_> = serde_json::from_str(line).map_err(|e| EventError::Json(e.to_string()))?;
    let kind = match raw.kind {
        Kind::Impression => EventKind::Impression,
        Kind::Click => EventKind::Click,
        Kind::Access => EventKind::Access,
    };
    let event = BehaviorEvent {
        kind,
        user_id: raw.user_id.into_owned(),
        article_id: raw.article_id.map(|a| a.into_owned()),
        ts: raw.ts,
        seq: raw.seq,
    };
    if !event.is_well_formed() {
        return Err(EventError::MissingArticle(kind.as_str()));
    }
    Ok(event)
}

pub fn event_to_line(e: &BehaviorEvent) -> String {
    let kind = match e.kind {
        EventKind::Impression => Kind::Impression,
        EventKind::Click => Kind::Click,
        EventKind::Access => Kind::Access,
    };
    let line = EventLine {
        kind,
        user_id: e.user_id.as_str().into(),
        article_id: e.article_id.as_deref().map(Into::into),
        ts: e.ts,
        seq: e.seq,
    };
    serde_json::to_string(&line).expect("event serializes")
}

pub fn write_events<'a, W: Write>(mut w: W, events: impl IntoIterator<Item = &'a BehaviorEvent>) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", event_to_line(e))?;
    }
    Ok(())
}

/// A line that failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BadLine {
    /// 1-based.
    pub line: usize,
    pub error: String,
}

/// Parses every line, collecting failures instead of stopping. Blank lines are skipped.
pub fn read_events<R: BufRead>(r: R) -> Result<(Vec<BehaviorEvent>, Vec<BadLine>), FormatError> {
    let mut events = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_event(&line) {
            Ok(e) => events.push(e),
            Err(e) => bad.push(BadLine {
                line: i + 1,
                error: e.to_string(),
            }),
        }
    }
    Ok((events, bad))
}

/// One article as stored on disk. Vectors are derived at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArticleLine {
    pub article_id: String,
    pub published_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<usize>,
    pub tokens: Vec<String>,
}

pub fn write_articles<'a, W: Write>(mut w: W, articles: impl IntoIterator<Item = &'a ArticleLine>) -> std::io::Result<()> {
    for a in articles {
        writeln!(w, "{}", serde_json::to_string(a).expect("article serializes"))?;
    }
    Ok(())
}

pub fn read_articles<R: BufRead>(r: R) -> Result<Vec<ArticleLine>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One evaluation hour: what was available, shown and clicked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourSegment {
    pub hour_start: Timestamp,
    pub candidates_all: Vec<String>,
    /// In display order, without repeats.
    pub per_user_displayed: BTreeMap<String, Vec<String>>,
    pub per_user_clicked: BTreeMap<String, BTreeSet<String>>,
}

pub fn write_segments<'a, W: Write>(mut w: W, segments: impl IntoIterator<Item = &'a HourSegment>) -> std::io::Result<()> {
    for s in segments {
        writeln!(w, "{}", serde_json::to_string(s).expect("segment serializes"))?;
    }
    Ok(())
}

pub fn read_segments<R: BufRead>(r: R) -> Result<Vec<HourSegment>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
