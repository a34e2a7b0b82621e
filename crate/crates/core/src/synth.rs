//! Synthetic streams with planted local bursts, and scoring against them.
//!
//! Background tweets are spread uniformly over a square region and draw
//! keywords from a Zipf-distributed common vocabulary. Each planted burst is a
//! tight Gaussian blob of tweets within a short span that use a vocabulary of
//! their own.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::geo::EARTH_RADIUS_M;
use crate::ingest::{Stopwords, Tweet};
use crate::store::EventRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Half the side of the square region.
    pub half_extent_m: f64,
    pub start_ts: u64,
    pub duration_s: u64,
    pub background_tweets: usize,
    pub background_vocab: usize,
    pub zipf_exponent: f64,
    pub keywords_per_tweet: (usize, usize),
    pub users: usize,
    pub bursts: usize,
    /// Bursts start no earlier than this many seconds into the stream.
    pub burst_warmup_s: u64,
    pub burst_size: (usize, usize),
    pub burst_span_s: u64,
    pub burst_sigma_m: (f64, f64),
    pub burst_vocab: usize,
    pub burst_keywords_per_tweet: (usize, usize),
    /// Tweet ids are this prefix followed by a zero-padded index.
    pub id_prefix: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            center_lat: 41.88,
            center_lon: -87.63,
            half_extent_m: 10_000.0,
            start_ts: 1_700_000_000,
            duration_s: 30 * 3600,
            background_tweets: 7_500,
            background_vocab: 300,
            zipf_exponent: 1.0,
            keywords_per_tweet: (3, 6),
            users: 2_000,
            bursts: 50,
            burst_warmup_s: 7 * 3600,
            burst_size: (15, 30),
            burst_span_s: 1_800,
            burst_sigma_m: (100.0, 200.0),
            burst_vocab: 6,
            burst_keywords_per_tweet: (2, 4),
            id_prefix: "t".into(),
        }
    }
}

impl SynthParams {
    /// Parameters for a burst-free stream covering the `duration_s` seconds
    /// just before this one, at the same background rate. Ids use prefix `h`.
    pub fn history(&self, duration_s: u64) -> Self {
        let rate = self.background_tweets as f64 / self.duration_s.max(1) as f64;
        Self {
            seed: self.seed ^ 0x4849_5354,
            start_ts: self.start_ts - duration_s,
            duration_s,
            background_tweets: (rate * duration_s as f64).round() as usize,
            bursts: 0,
            id_prefix: "h".into(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBurst {
    pub lat: f64,
    pub lon: f64,
    pub start: u64,
    pub end: u64,
    pub keywords: Vec<String>,
    pub tweet_ids: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct SynthStream {
    /// Sorted by `(timestamp, id)`.
    pub tweets: Vec<Arc<Tweet>>,
    pub bursts: Vec<PlantedBurst>,
    burst_of: HashMap<String, usize>,
}

fn meters_per_degree() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

fn offset(lat: f64, lon: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    let m = meters_per_degree();
    (lat + north_m / m, lon + east_m / (m * lat.to_radians().cos()))
}

fn pick_distinct(rng: &mut ChaCha8Rng, count: usize, mut draw: impl FnMut(&mut ChaCha8Rng) -> String) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(count);
    for _ in 0..count * 20 {
        if out.len() == count {
            break;
        }
        let w = draw(rng);
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

impl SynthStream {
    pub fn generate(p: &SynthParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let stop = Stopwords::empty();
        let zipf = Zipf::new(p.background_vocab as u64, p.zipf_exponent).expect("valid zipf parameters");
        let mut raw: Vec<(u64, String, f64, f64, String, Option<usize>)> = Vec::new();

        for _ in 0..p.background_tweets {
            let ts = p.start_ts + rng.gen_range(0..p.duration_s);
            let (lat, lon) = offset(
                p.center_lat,
                p.center_lon,
                rng.gen_range(-p.half_extent_m..p.half_extent_m),
                rng.gen_range(-p.half_extent_m..p.half_extent_m),
            );
            let k = rng.gen_range(p.keywords_per_tweet.0..=p.keywords_per_tweet.1);
            let words = pick_distinct(&mut rng, k, |r| format!("w{}", zipf.sample(r) as u64));
            let user = format!("u{}", rng.gen_range(0..p.users));
            raw.push((ts, user, lat, lon, words.join(" "), None));
        }

        let mut bursts = Vec::with_capacity(p.bursts);
        let room = p.duration_s.saturating_sub(p.burst_warmup_s + p.burst_span_s).max(1);
        for b in 0..p.bursts {
            let slot = room * b as u64 / p.bursts.max(1) as u64;
            let jitter = rng.gen_range(0..(room / p.bursts.max(1) as u64).max(1));
            let start = p.start_ts + p.burst_warmup_s + slot + jitter;
            let margin = p.half_extent_m * 0.9;
            let (clat, clon) = offset(
                p.center_lat,
                p.center_lon,
                rng.gen_range(-margin..margin),
                rng.gen_range(-margin..margin),
            );
            let sigma = rng.gen_range(p.burst_sigma_m.0..=p.burst_sigma_m.1);
            let normal = Normal::new(0.0, sigma).expect("positive sigma");
            let vocab: Vec<String> = (0..p.burst_vocab).map(|j| format!("e{b}k{j}")).collect();
            let size = rng.gen_range(p.burst_size.0..=p.burst_size.1);
            for _ in 0..size {
                let ts = start + rng.gen_range(0..p.burst_span_s);
                let (lat, lon) = offset(clat, clon, normal.sample(&mut rng), normal.sample(&mut rng));
                let k = rng.gen_range(p.burst_keywords_per_tweet.0..=p.burst_keywords_per_tweet.1);
                let words = pick_distinct(&mut rng, k, |r| vocab[r.gen_range(0..vocab.len())].clone());
                let user = format!("u{}", rng.gen_range(0..p.users));
                raw.push((ts, user, lat, lon, words.join(" "), Some(b)));
            }
            bursts.push(PlantedBurst {
                lat: clat,
                lon: clon,
                start,
                end: start + p.burst_span_s,
                keywords: vocab,
                tweet_ids: BTreeSet::new(),
            });
        }

        raw.sort_by_key(|a| a.0);
        let width = raw.len().to_string().len().max(6);
        let mut tweets = Vec::with_capacity(raw.len());
        let mut burst_of = HashMap::new();
        for (i, (ts, user, lat, lon, text, burst)) in raw.into_iter().enumerate() {
            let id = format!("{}{i:0width$}", p.id_prefix);
            let t = Tweet::new(&id, &user, ts, lat, lon, &text, &stop).expect("generated tweets are valid");
            if let Some(b) = burst {
                bursts[b].tweet_ids.insert(id.clone());
                burst_of.insert(id, b);
            }
            tweets.push(Arc::new(t));
        }
        Self {
            tweets,
            bursts,
            burst_of,
        }
    }

    /// Reassembles a stream from its tweets and planted bursts, for example
    /// after reading both back from files.
    pub fn from_parts(tweets: Vec<Arc<Tweet>>, bursts: Vec<PlantedBurst>) -> Self {
        let burst_of = bursts
            .iter()
            .enumerate()
            .flat_map(|(b, burst)| burst.tweet_ids.iter().map(move |id| (id.clone(), b)))
            .collect();
        Self {
            tweets,
            bursts,
            burst_of,
        }
    }

    pub fn burst_of(&self, tweet_id: &str) -> Option<usize> {
        self.burst_of.get(tweet_id).copied()
    }

    /// The burst holding a strict majority of `member_ids`, if any.
    pub fn majority_burst<'a>(&self, member_ids: impl IntoIterator<Item = &'a str>) -> Option<usize> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut total = 0;
        for id in member_ids {
            total += 1;
            if let Some(b) = self.burst_of(id) {
                *counts.entry(b).or_insert(0) += 1;
            }
        }
        counts.into_iter().find(|&(_, c)| 2 * c > total).map(|(b, _)| b)
    }

    /// JSON Lines stream file contents.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for t in &self.tweets {
            out.push_str(&t.to_record());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub events: usize,
    pub correct_events: usize,
    pub bursts: usize,
    pub recovered_bursts: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision counts reported events dominated by one planted burst; recall
/// counts planted bursts that dominate at least one reported event.
pub fn evaluate<'a>(stream: &SynthStream, events: impl IntoIterator<Item = &'a EventRecord>) -> Recovery {
    let mut total = 0;
    let mut correct = 0;
    let mut found = BTreeSet::new();
    for e in events {
        total += 1;
        if let Some(b) = stream.majority_burst(e.member_ids.iter().map(String::as_str)) {
            correct += 1;
            found.insert(b);
        }
    }
    let bursts = stream.bursts.len();
    Recovery {
        events: total,
        correct_events: correct,
        bursts,
        recovered_bursts: found.len(),
        precision: if total == 0 { 1.0 } else { correct as f64 / total as f64 },
        recall: if bursts == 0 { 1.0 } else { found.len() as f64 / bursts as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_m;

    fn small() -> SynthParams {
        SynthParams {
            background_tweets: 500,
            bursts: 5,
            duration_s: 4 * 3600,
            burst_warmup_s: 3600,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic_and_sorted() {
        let a = SynthStream::generate(&small());
        let b = SynthStream::generate(&small());
        assert_eq!(a.tweets, b.tweets);
        assert!(a.tweets.windows(2).all(|w| (w[0].timestamp, &w[0].id) <= (w[1].timestamp, &w[1].id)));
        let other = SynthStream::generate(&SynthParams { seed: 8, ..small() });
        assert_ne!(a.tweets, other.tweets);
    }

    #[test]
    fn bursts_are_tight_and_labelled() {
        let p = small();
        let s = SynthStream::generate(&p);
        for (i, b) in s.bursts.iter().enumerate() {
            assert!((p.burst_size.0..=p.burst_size.1).contains(&b.tweet_ids.len()));
            for t in s.tweets.iter().filter(|t| b.tweet_ids.contains(&t.id)) {
                assert_eq!(s.burst_of(&t.id), Some(i));
                assert!(t.timestamp >= b.start && t.timestamp < b.end);
                assert!(haversine_m(b.lat, b.lon, t.lat, t.lon) < 6.0 * p.burst_sigma_m.1 * 1.5);
                assert!(t.keywords.iter().all(|k| b.keywords.contains(k)));
            }
        }
        let n_burst: usize = s.bursts.iter().map(|b| b.tweet_ids.len()).sum();
        assert_eq!(s.tweets.len(), p.background_tweets + n_burst);
    }

    #[test]
    fn majority_and_scores() {
        let s = SynthStream::generate(&small());
        let b0: Vec<&str> = s.bursts[0].tweet_ids.iter().map(String::as_str).take(3).collect();
        let bg: Vec<&str> = s
            .tweets
            .iter()
            .filter(|t| s.burst_of(&t.id).is_none())
            .map(|t| t.id.as_str())
            .take(3)
            .collect();
        assert_eq!(s.majority_burst(b0.iter().copied()), Some(0));
        let mixed: Vec<&str> = b0.iter().chain(bg.iter()).copied().collect();
        assert_eq!(s.majority_burst(mixed), None);

        let ev = |ids: &[&str]| EventRecord {
            event_id: "x".into(),
            pivot_id: ids[0].into(),
            lat: 0.0,
            lon: 0.0,
            start: 0,
            end: 0,
            top_keywords: vec![],
            score: 1.0,
            member_ids: ids.iter().map(|s| s.to_string()).collect(),
            detected_at: 0,
            updated_at: 0,
        };
        let events = [ev(&b0), ev(&bg)];
        let r = evaluate(&s, &events);
        assert_eq!((r.events, r.correct_events, r.recovered_bursts), (2, 1, 1));
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 0.2);
    }
}
