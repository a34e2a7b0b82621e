//! Stream ingestion: record parsing, keyword extraction and the sliding query
//! window.
//!
//! Records are JSON Lines with the fields `id`, `user_id`, `timestamp`, `lat`,
//! `lon` and `text`. Lines starting with `#` are comments. Readers skip and
//! count bad lines instead of aborting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Tokens shorter than this (in characters) are dropped.
pub const MIN_TOKEN_CHARS: usize = 2;

/// A set of tokens removed during tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// Parses a stopword file: one token per line, `#` comments, blank lines ignored.
    /// Entries go through the same normalization as stream text.
    pub fn parse(contents: &str) -> Self {
        let words = contents
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .flat_map(normalize_words)
            .collect();
        Self(words)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

/// Lowercases, drops apostrophes, and splits on every other non-alphanumeric
/// character.
fn normalize_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .map(|raw| {
            raw.chars()
                .filter(|c| *c != '\'' && *c != '\u{2019}')
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
}

/// Extracts the keyword multiset of `text`, returned sorted so that equal
/// multisets compare equal.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let mut out: Vec<String> = normalize_words(text)
        .filter(|w| w.chars().count() >= MIN_TOKEN_CHARS && !stopwords.contains(w))
        .collect();
    out.sort_unstable();
    out
}

/// One geo-tagged message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub user_id: String,
    pub timestamp: u64,
    pub lat: f64,
    pub lon: f64,
    pub text: String,
    /// Sorted keyword multiset.
    pub keywords: Vec<String>,
}

impl Tweet {
    /// Builds a tweet from raw fields, validating coordinates and tokenizing `text`.
    pub fn new(
        id: impl Into<String>,
        user_id: impl Into<String>,
        timestamp: u64,
        lat: f64,
        lon: f64,
        text: impl Into<String>,
        stopwords: &Stopwords,
    ) -> std::result::Result<Self, ParseError> {
        check_coordinate("lat", lat, 90.0)?;
        check_coordinate("lon", lon, 180.0)?;
        let text = text.into();
        let keywords = tokenize(&text, stopwords);
        if keywords.is_empty() {
            return Err(ParseError::EmptyKeywords);
        }
        Ok(Self {
            id: id.into(),
            user_id: user_id.into(),
            timestamp,
            lat,
            lon,
            text,
            keywords,
        })
    }

    /// The stream-file line for this tweet.
    pub fn to_record(&self) -> String {
        serde_json::to_string(&RawRecord {
            id: self.id.clone(),
            user_id: self.user_id.clone(),
            timestamp: self.timestamp,
            lat: Some(self.lat),
            lon: Some(self.lon),
            text: self.text.clone(),
        })
        .expect("record serialization cannot fail")
    }
}

fn check_coordinate(
    field: &'static str,
    value: f64,
    bound: f64,
) -> std::result::Result<(), ParseError> {
    if !value.is_finite() || value < -bound || value > bound {
        return Err(ParseError::CoordinateOutOfRange { field, value });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    user_id: String,
    timestamp: u64,
    lat: Option<f64>,
    lon: Option<f64>,
    text: String,
}

/// Parses one stream line into a validated tweet.
pub fn parse_record(line: &str, stopwords: &Stopwords) -> std::result::Result<Tweet, ParseError> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let lat = raw.lat.ok_or(ParseError::MissingCoordinate("lat"))?;
    let lon = raw.lon.ok_or(ParseError::MissingCoordinate("lon"))?;
    Tweet::new(raw.id, raw.user_id, raw.timestamp, lat, lon, raw.text, stopwords)
}

/// Counters kept while reading a stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub accepted: u64,
    pub comments: u64,
    pub malformed: u64,
    pub missing_coordinates: u64,
    pub out_of_range: u64,
    pub empty_keywords: u64,
    pub duplicate_ids: u64,
}

impl IngestStats {
    pub fn rejected(&self) -> u64 {
        self.malformed
            + self.missing_coordinates
            + self.out_of_range
            + self.empty_keywords
            + self.duplicate_ids
    }

    fn record(&mut self, err: &ParseError) {
        match err {
            ParseError::Malformed(_) => self.malformed += 1,
            ParseError::MissingCoordinate(_) => self.missing_coordinates += 1,
            ParseError::CoordinateOutOfRange { .. } => self.out_of_range += 1,
            ParseError::EmptyKeywords => self.empty_keywords += 1,
        }
    }
}

/// Reads a whole stream, skipping bad lines and repeated ids, and returns the
/// tweets ordered by `(timestamp, id)`.
pub fn read_stream<R: BufRead>(
    reader: R,
    stopwords: &Stopwords,
) -> Result<(Vec<Arc<Tweet>>, IngestStats)> {
    let mut stats = IngestStats::default();
    let mut seen = HashSet::new();
    let mut tweets = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            stats.comments += 1;
            continue;
        }
        match parse_record(trimmed, stopwords) {
            Ok(tweet) => {
                if !seen.insert(tweet.id.clone()) {
                    stats.duplicate_ids += 1;
                    continue;
                }
                stats.accepted += 1;
                tweets.push(Arc::new(tweet));
            }
            Err(e) => stats.record(&e),
        }
    }
    tweets.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
    Ok((tweets, stats))
}

pub fn read_stream_file(
    path: impl AsRef<Path>,
    stopwords: &Stopwords,
) -> Result<(Vec<Arc<Tweet>>, IngestStats)> {
    let file = std::fs::File::open(path)?;
    read_stream(std::io::BufReader::new(file), stopwords)
}

/// Tweets removed from and inserted into the window by one shift.
#[derive(Debug, Clone, Default)]
pub struct WindowDiff {
    pub removed: Vec<Arc<Tweet>>,
    pub inserted: Vec<Arc<Tweet>>,
}

impl WindowDiff {
    pub fn is_empty(&self) -> bool {
        self.removed.is_empty() && self.inserted.is_empty()
    }

    pub fn len(&self) -> usize {
        self.removed.len() + self.inserted.len()
    }
}

/// The tweets with `start <= timestamp < end`, keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryWindow {
    start: u64,
    end: u64,
    length: u64,
    tweets: BTreeMap<String, Arc<Tweet>>,
}

impl QueryWindow {
    /// An empty window ending at `end` with the given length in seconds.
    pub fn new(end: u64, length: u64) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidParameter("window length must be positive".into()));
        }
        Ok(Self {
            start: end.saturating_sub(length),
            end,
            length,
            tweets: BTreeMap::new(),
        })
    }

    /// Restores a window from persisted parts.
    pub fn from_parts(end: u64, length: u64, tweets: Vec<Arc<Tweet>>) -> Result<Self> {
        let mut window = Self::new(end, length)?;
        for t in tweets {
            if t.timestamp < window.start || t.timestamp >= end {
                return Err(Error::InvalidParameter(format!(
                    "tweet {} at t={} lies outside [{}, {end})",
                    t.id, t.timestamp, window.start
                )));
            }
            window.tweets.insert(t.id.clone(), t);
        }
        Ok(window)
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    /// Nominal length; `end - start` is shorter while the window still
    /// touches time zero.
    pub fn length(&self) -> u64 {
        self.length
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.tweets.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Tweet>> {
        self.tweets.get(id)
    }

    /// Member tweets in id order.
    pub fn tweets(&self) -> impl Iterator<Item = &Arc<Tweet>> {
        self.tweets.values()
    }

    /// Shifts the window so it ends at `new_end`, keeping its length.
    ///
    /// `buffered` must hold every not-yet-delivered tweet with timestamp below
    /// `new_end`; tweets that are already stale in the new window are skipped.
    pub fn advance(&self, new_end: u64, buffered: &[Arc<Tweet>]) -> Result<(QueryWindow, WindowDiff)> {
        if new_end <= self.end {
            return Err(Error::WindowNotAdvancing {
                end: self.end,
                new_end,
            });
        }
        let new_start = new_end.saturating_sub(self.length);
        let mut tweets = self.tweets.clone();
        let mut diff = WindowDiff::default();
        tweets.retain(|_, t| {
            let keep = t.timestamp >= new_start;
            if !keep {
                diff.removed.push(Arc::clone(t));
            }
            keep
        });
        let mut fresh = BTreeSet::new();
        for t in buffered {
            if t.timestamp >= new_start
                && t.timestamp < new_end
                && !self.tweets.contains_key(&t.id)
                && fresh.insert(t.id.clone())
            {
                tweets.insert(t.id.clone(), Arc::clone(t));
                diff.inserted.push(Arc::clone(t));
            }
        }
        diff.inserted.sort_by(|a, b| a.id.cmp(&b.id));
        Ok((
            QueryWindow {
                start: new_start,
                end: new_end,
                length: self.length,
                tweets,
            },
            diff,
        ))
    }
}

/// Replays a time-ordered tweet sequence through a [`QueryWindow`].
#[derive(Debug, Clone)]
pub struct WindowCursor {
    stream: Vec<Arc<Tweet>>,
    next: usize,
    window: QueryWindow,
}

impl WindowCursor {
    /// `stream` must be sorted by timestamp; tweets before `window.end()` are
    /// treated as already delivered.
    pub fn new(stream: Vec<Arc<Tweet>>, window: QueryWindow) -> Self {
        let next = stream.partition_point(|t| t.timestamp < window.end());
        Self {
            stream,
            next,
            window,
        }
    }

    pub fn window(&self) -> &QueryWindow {
        &self.window
    }

    pub fn remaining(&self) -> usize {
        self.stream.len() - self.next
    }

    /// Timestamp of the last tweet in the stream, if any.
    pub fn last_timestamp(&self) -> Option<u64> {
        self.stream.last().map(|t| t.timestamp)
    }

    pub fn advance(&mut self, new_end: u64) -> Result<WindowDiff> {
        let upto = self.next + self.stream[self.next..].partition_point(|t| t.timestamp < new_end);
        let (window, diff) = self.window.advance(new_end, &self.stream[self.next..upto])?;
        self.window = window;
        self.next = upto;
        Ok(diff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sw() -> Stopwords {
        Stopwords::default()
    }

    fn tweet(id: &str, ts: u64) -> Arc<Tweet> {
        Arc::new(Tweet::new(id, "u", ts, 0.0, 0.0, "word", &Stopwords::empty()).unwrap())
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Dinner!! at Navy Pier", &sw()), vec!["dinner", "navy", "pier"]);
        assert_eq!(tokenize("dinner", &sw()), vec!["dinner"]);
        assert!(tokenize("", &sw()).is_empty());
        assert_eq!(tokenize("a b cc CC", &sw()), vec!["cc", "cc"]);
        assert_eq!(tokenize("Don't stop #BearsGame", &sw()), vec!["bearsgame", "stop"]);
    }

    #[test]
    fn parse_valid_record() {
        let line = r#"{"id":"1","user_id":"u1","timestamp":100,"lat":41.88,"lon":-87.63,"text":"dinner at navy pier"}"#;
        let t = parse_record(line, &sw()).unwrap();
        assert_eq!(t.keywords, vec!["dinner", "navy", "pier"]);
        assert_eq!(t.timestamp, 100);
        assert_eq!((t.lat, t.lon), (41.88, -87.63));
    }

    #[test]
    fn parse_errors_are_distinct() {
        let s = sw();
        let bad_lat = r#"{"id":"1","user_id":"u","timestamp":1,"lat":91,"lon":0,"text":"hello there"}"#;
        assert!(matches!(
            parse_record(bad_lat, &s),
            Err(ParseError::CoordinateOutOfRange { field: "lat", .. })
        ));
        let no_lon = r#"{"id":"1","user_id":"u","timestamp":1,"lat":1,"text":"hello there"}"#;
        assert_eq!(parse_record(no_lon, &s), Err(ParseError::MissingCoordinate("lon")));
        let stop = r#"{"id":"1","user_id":"u","timestamp":1,"lat":1,"lon":2,"text":"at the of"}"#;
        assert_eq!(parse_record(stop, &s), Err(ParseError::EmptyKeywords));
        assert!(matches!(parse_record("{not json", &s), Err(ParseError::Malformed(_))));
    }

    #[test]
    fn reader_skips_and_counts() {
        let data = "# header\n\
            {\"id\":\"b\",\"user_id\":\"u\",\"timestamp\":5,\"lat\":1,\"lon\":1,\"text\":\"late tweet\"}\n\
            {\"id\":\"a\",\"user_id\":\"u\",\"timestamp\":2,\"lat\":1,\"lon\":1,\"text\":\"early tweet\"}\n\
            {\"id\":\"a\",\"user_id\":\"u\",\"timestamp\":3,\"lat\":1,\"lon\":1,\"text\":\"dup tweet\"}\n\
            {\"id\":\"c\",\"user_id\":\"u\",\"timestamp\":3,\"lat\":100,\"lon\":1,\"text\":\"bad\"}\n\
            garbage\n\
            {\"id\":\"d\",\"user_id\":\"u\",\"timestamp\":3,\"lat\":1,\"lon\":1,\"text\":\"to be\"}\n";
        let (tweets, stats) = read_stream(data.as_bytes(), &sw()).unwrap();
        let ids: Vec<_> = tweets.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(stats.accepted, 2);
        assert_eq!(stats.comments, 1);
        assert_eq!(stats.duplicate_ids, 1);
        assert_eq!(stats.out_of_range, 1);
        assert_eq!(stats.malformed, 1);
        assert_eq!(stats.empty_keywords, 1);
        assert_eq!(stats.rejected(), 4);
    }

    #[test]
    fn advance_example() {
        let w = QueryWindow::from_parts(60, 60, vec![tweet("a", 5), tweet("b", 30)]).unwrap();
        let (w2, diff) = w.advance(70, &[tweet("c", 65)]).unwrap();
        assert_eq!(w2.start(), 10);
        assert_eq!(w2.end(), 70);
        assert_eq!(diff.removed.len(), 1);
        assert_eq!(diff.removed[0].id, "a");
        assert_eq!(diff.inserted.len(), 1);
        assert_eq!(diff.inserted[0].id, "c");
        assert!(w2.contains("b") && w2.contains("c") && !w2.contains("a"));
    }

    #[test]
    fn identity_shift_has_empty_diff() {
        let w = QueryWindow::from_parts(60, 60, vec![tweet("a", 30)]).unwrap();
        let (w2, diff) = w.advance(65, &[]).unwrap();
        assert!(diff.is_empty());
        assert_eq!(w2.len(), 1);
    }

    #[test]
    fn advance_rejects_non_forward_shift() {
        let w = QueryWindow::new(60, 60).unwrap();
        assert!(matches!(w.advance(60, &[]), Err(Error::WindowNotAdvancing { .. })));
        assert!(w.advance(59, &[]).is_err());
    }

    #[test]
    fn stale_buffered_tweets_never_enter() {
        let w = QueryWindow::new(60, 60).unwrap();
        let (w2, diff) = w.advance(200, &[tweet("old", 100), tweet("new", 150)]).unwrap();
        assert_eq!(diff.inserted.len(), 1);
        assert!(w2.contains("new") && !w2.contains("old"));
    }

    #[test]
    fn record_round_trip() {
        let t = Tweet::new("x1", "u9", 42, -33.5, 151.25, "Surf's up at Bondi!", &sw()).unwrap();
        let again = parse_record(&t.to_record(), &sw()).unwrap();
        assert_eq!(t, again);
    }
}
