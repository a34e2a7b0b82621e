//! Detected events and the query surface over them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::candidate::CandidateEvent;
use crate::error::{Error, Result};
use crate::geo::haversine_m;
use crate::ingest::Tweet;

pub const DEFAULT_TOP_KEYWORDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub pivot_id: String,
    pub lat: f64,
    pub lon: f64,
    /// Earliest member timestamp.
    pub start: u64,
    /// Latest member timestamp.
    pub end: u64,
    pub top_keywords: Vec<String>,
    /// Classifier probability.
    pub score: f64,
    pub member_ids: Vec<String>,
    /// Window end of the first shift that reported this event.
    pub detected_at: u64,
    /// Window end of the latest shift that reported it.
    pub updated_at: u64,
}

pub fn event_id_for(pivot_id: &str) -> String {
    format!("ev-{pivot_id}")
}

/// Most frequent member keywords, ties alphabetical.
pub fn top_keywords(members: &[Arc<Tweet>], k: usize) -> Vec<String> {
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for t in members {
        for kw in &t.keywords {
            *freq.entry(kw.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(kw, _)| kw.to_string()).collect()
}

impl EventRecord {
    pub fn from_candidate(candidate: &CandidateEvent, score: f64, detected_at: u64, top_k: usize) -> Self {
        let start = candidate.members.iter().map(|t| t.timestamp).min().unwrap_or(0);
        let end = candidate.members.iter().map(|t| t.timestamp).max().unwrap_or(0);
        Self {
            event_id: event_id_for(&candidate.pivot.id),
            pivot_id: candidate.pivot.id.clone(),
            lat: candidate.pivot.lat,
            lon: candidate.pivot.lon,
            start,
            end,
            top_keywords: top_keywords(&candidate.members, top_k),
            score,
            member_ids: candidate.members.iter().map(|t| t.id.clone()).collect(),
            detected_at,
            updated_at: detected_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventQuery {
    pub from: u64,
    pub to: u64,
    pub keyword: Option<String>,
    pub area: Option<Area>,
}

impl EventQuery {
    pub fn range(from: u64, to: u64) -> Self {
        Self {
            from,
            to,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.from > self.to {
            return Err(Error::InvalidQuery(format!("from ({}) is after to ({})", self.from, self.to)));
        }
        if let Some(a) = &self.area {
            if !(a.radius_m > 0.0 && a.radius_m.is_finite()) {
                return Err(Error::InvalidQuery("radius must be a positive number of meters".into()));
            }
            if !(-90.0..=90.0).contains(&a.lat) || !(-180.0..=180.0).contains(&a.lon) {
                return Err(Error::InvalidQuery("center lies outside valid coordinates".into()));
            }
        }
        if matches!(&self.keyword, Some(k) if k.trim().is_empty()) {
            return Err(Error::InvalidQuery("keyword is empty".into()));
        }
        Ok(())
    }

    /// The three predicates, applied to one record.
    pub fn matches(&self, e: &EventRecord) -> bool {
        if e.start > self.to || e.end < self.from {
            return false;
        }
        if let Some(k) = &self.keyword {
            let k = k.trim().to_lowercase();
            if !e.top_keywords.contains(&k) {
                return false;
            }
        }
        match &self.area {
            Some(a) => haversine_m(a.lat, a.lon, e.lat, e.lon) <= a.radius_m,
            None => true,
        }
    }
}

/// An event with its member tweets, as kept in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub record: EventRecord,
    pub members: Vec<Arc<Tweet>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventStore {
    events: BTreeMap<String, StoredEvent>,
    by_start: BTreeSet<(u64, String)>,
    longest_span: u64,
}

impl EventStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, event_id: &str) -> Option<&StoredEvent> {
        self.events.get(event_id)
    }

    /// Events in id order.
    pub fn iter(&self) -> impl Iterator<Item = &StoredEvent> {
        self.events.values()
    }

    /// Inserts or replaces by event id, keeping the first detection time.
    pub fn upsert(&mut self, mut event: StoredEvent) {
        let id = event.record.event_id.clone();
        if let Some(old) = self.events.get(&id) {
            event.record.detected_at = old.record.detected_at.min(event.record.detected_at);
            self.by_start.remove(&(old.record.start, id.clone()));
        }
        self.longest_span = self.longest_span.max(event.record.end - event.record.start);
        self.by_start.insert((event.record.start, id.clone()));
        self.events.insert(id, event);
    }

    pub fn query(&self, q: &EventQuery) -> Result<Vec<EventRecord>> {
        q.validate()?;
        let lo = (q.from.saturating_sub(self.longest_span), String::new());
        let mut hits: Vec<EventRecord> = self
            .by_start
            .range(lo..)
            .take_while(|(start, _)| *start <= q.to)
            .map(|(_, id)| &self.events[id].record)
            .filter(|e| q.matches(e))
            .cloned()
            .collect();
        sort_results(&mut hits);
        Ok(hits)
    }

    /// One JSON object per line, id order.
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        for e in self.events.values() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Replays a log; later lines replace earlier ones with the same id.
    pub fn read_log<R: BufRead>(input: R) -> Result<Self> {
        let mut store = Self::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: StoredEvent = serde_json::from_str(&line)
                .map_err(|err| Error::Corrupt("events".into(), format!("line {}: {err}", i + 1)))?;
            store.upsert(e);
        }
        Ok(store)
    }
}

/// Score descending, then event id.
pub fn sort_results(events: &mut [EventRecord]) {
    events.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.event_id.cmp(&b.event_id)));
}

pub fn query_events(store: &EventStore, q: &EventQuery) -> Result<Vec<EventRecord>> {
    store.query(q)
}
