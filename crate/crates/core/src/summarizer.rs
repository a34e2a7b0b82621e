//! Activity timeline: additive where-when-what tweet clusters maintained
//! online, with pyramidal snapshot retention for historical lookups.
//!
//! Coordinates are summed in fixed point (1e-7 degree units) and timestamps as
//! integers, so every cluster field is exact and absorb/merge are exactly
//! associative and commutative.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{epanechnikov, haversine_m, EARTH_RADIUS_M};
use crate::ingest::Tweet;

/// Fixed-point scale for coordinates.
pub const COORD_SCALE: f64 = 1e7;

fn to_fixed(deg: f64) -> i128 {
    (deg * COORD_SCALE).round() as i128
}

fn meters_per_degree() -> f64 {
    EARTH_RADIUS_M.to_radians()
}

/// Where-when-what summary of a set of tweets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetCluster {
    n: u64,
    /// Linear sums of (lat, lon) in fixed point.
    ml: [i128; 2],
    /// Per-coordinate squared sums in fixed point.
    msl: [i128; 2],
    mt: u128,
    mst: u128,
    me: BTreeMap<String, u64>,
}

impl TweetCluster {
    pub fn from_tweet(tweet: &Tweet) -> Self {
        let mut tc = Self {
            n: 0,
            ml: [0; 2],
            msl: [0; 2],
            mt: 0,
            mst: 0,
            me: BTreeMap::new(),
        };
        tc.absorb(tweet);
        tc
    }

    /// Cluster over `tweets`; `None` when empty.
    pub fn from_tweets<'a>(tweets: impl IntoIterator<Item = &'a Tweet>) -> Option<Self> {
        let mut iter = tweets.into_iter();
        let mut tc = Self::from_tweet(iter.next()?);
        iter.for_each(|t| tc.absorb(t));
        Some(tc)
    }

    pub fn absorb(&mut self, tweet: &Tweet) {
        let p = [to_fixed(tweet.lat), to_fixed(tweet.lon)];
        self.n += 1;
        for i in 0..2 {
            self.ml[i] += p[i];
            self.msl[i] += p[i] * p[i];
        }
        let t = tweet.timestamp as u128;
        self.mt += t;
        self.mst += t * t;
        for k in &tweet.keywords {
            *self.me.entry(k.clone()).or_insert(0) += 1;
        }
    }

    /// Field-wise sum.
    pub fn merge(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.merge_from(other);
        out
    }

    pub fn merge_from(&mut self, other: &Self) {
        self.n += other.n;
        for i in 0..2 {
            self.ml[i] += other.ml[i];
            self.msl[i] += other.msl[i];
        }
        self.mt += other.mt;
        self.mst += other.mst;
        for (k, c) in &other.me {
            *self.me.entry(k.clone()).or_insert(0) += c;
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Linear coordinate sums in degrees.
    pub fn linear_sum(&self) -> [f64; 2] {
        [self.ml[0] as f64 / COORD_SCALE, self.ml[1] as f64 / COORD_SCALE]
    }

    pub fn time_sum(&self) -> u128 {
        self.mt
    }

    pub fn time_square_sum(&self) -> u128 {
        self.mst
    }

    pub fn keyword_counts(&self) -> &BTreeMap<String, u64> {
        &self.me
    }

    pub fn keyword_count(&self, keyword: &str) -> u64 {
        self.me.get(keyword).copied().unwrap_or(0)
    }

    /// Mean (lat, lon) in degrees.
    pub fn center(&self) -> (f64, f64) {
        let n = self.n as f64;
        (
            self.ml[0] as f64 / COORD_SCALE / n,
            self.ml[1] as f64 / COORD_SCALE / n,
        )
    }

    /// Per-coordinate variance in squared degrees, computed exactly in
    /// integers before the final division.
    pub fn location_variance(&self) -> [f64; 2] {
        let n = self.n as i128;
        let scale2 = COORD_SCALE * COORD_SCALE;
        [0, 1].map(|i| {
            let num = n * self.msl[i] - self.ml[i] * self.ml[i];
            num as f64 / (n * n) as f64 / scale2
        })
    }

    /// Root-mean-square distance of members from the center, in meters.
    pub fn spatial_std_m(&self) -> f64 {
        let [vlat, vlon] = self.location_variance();
        let m = meters_per_degree();
        let cos = self.center().0.to_radians().cos();
        (vlat * m * m + vlon * (m * cos).powi(2)).max(0.0).sqrt()
    }

    pub fn mean_time(&self) -> f64 {
        self.mt as f64 / self.n as f64
    }

    pub fn time_variance(&self) -> f64 {
        let n = self.n as i128;
        let num = n * self.mst as i128 - (self.mt as i128) * (self.mt as i128);
        num as f64 / (n * n) as f64
    }

    fn distance_to(&self, lat: f64, lon: f64) -> f64 {
        let (clat, clon) = self.center();
        haversine_m(clat, clon, lat, lon)
    }
}

/// Kernel estimate of how often `keyword` occurs around `(lat, lon)`.
pub fn estimate_occurrences(clusters: &[TweetCluster], keyword: &str, lat: f64, lon: f64, bandwidth_m: f64) -> f64 {
    clusters
        .iter()
        .map(|tc| {
            let c = tc.keyword_count(keyword);
            if c == 0 {
                0.0
            } else {
                c as f64 * epanechnikov(tc.distance_to(lat, lon), bandwidth_m)
            }
        })
        .sum()
}

/// Kernel-weighted keyword counts attributed to `(lat, lon)`.
pub fn regional_keyword_mass(clusters: &[TweetCluster], lat: f64, lon: f64, bandwidth_m: f64) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for tc in clusters {
        let k = epanechnikov(tc.distance_to(lat, lon), bandwidth_m);
        if k <= 0.0 {
            continue;
        }
        for (kw, &c) in &tc.me {
            *out.entry(kw.clone()).or_insert(0.0) += c as f64 * k;
        }
    }
    out
}

/// One stored clustering state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub timestamp: u64,
    pub clusters: Arc<Vec<TweetCluster>>,
}

/// Pyramidal time frame: a snapshot taken at tick `t` lives at the largest
/// order `i` with `base^i | t`, and each order keeps its newest
/// `base^level + 1` snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidStore {
    base: u64,
    level: u32,
    orders: BTreeMap<u32, VecDeque<Snapshot>>,
}

impl PyramidStore {
    pub fn new(base: u64, level: u32) -> Self {
        assert!(base >= 2, "pyramid base must be at least 2");
        Self {
            base,
            level,
            orders: BTreeMap::new(),
        }
    }

    pub fn capacity_per_order(&self) -> usize {
        self.base.pow(self.level) as usize + 1
    }

    pub fn order_of(&self, tick: u64) -> u32 {
        assert!(tick > 0, "ticks start at 1");
        let mut order = 0;
        let mut t = tick;
        while t % self.base == 0 {
            t /= self.base;
            order += 1;
        }
        order
    }

    pub fn insert(&mut self, snapshot: Snapshot) {
        let order = self.order_of(snapshot.tick);
        let cap = self.capacity_per_order();
        let slot = self.orders.entry(order).or_default();
        slot.push_back(snapshot);
        while slot.len() > cap {
            slot.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.orders.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ticks currently stored, ascending.
    pub fn stored_ticks(&self) -> Vec<u64> {
        let mut ticks: Vec<u64> = self.orders.values().flatten().map(|s| s.tick).collect();
        ticks.sort_unstable();
        ticks
    }

    /// The stored snapshot with the largest timestamp not after `t`.
    pub fn retrieve(&self, t: u64) -> Result<&Snapshot> {
        self.orders
            .values()
            .flatten()
            .filter(|s| s.timestamp <= t)
            .max_by_key(|s| (s.timestamp, s.tick))
            .ok_or(Error::NoSnapshot(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimelineParams {
    /// Absorb radius in standard deviations.
    pub boundary_factor: f64,
    /// Absorb radius for single-tweet clusters, meters.
    pub singleton_radius_m: f64,
    /// Cap on active clusters.
    pub max_clusters: usize,
    /// Clusters whose mean time is older than this (seconds) ...
    pub stale_age_s: u64,
    /// ... and that hold fewer tweets than this are deleted first.
    pub stale_min_size: u64,
    pub pyramid_base: u64,
    pub pyramid_level: u32,
}

impl Default for TimelineParams {
    fn default() -> Self {
        Self {
            boundary_factor: 2.0,
            singleton_radius_m: 500.0,
            max_clusters: 150,
            stale_age_s: 24 * 3600,
            stale_min_size: 5,
            pyramid_base: 2,
            pyramid_level: 1,
        }
    }
}

/// Online CluStream-style clustering of the stream into tweet clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTimeline {
    params: TimelineParams,
    active: Vec<TweetCluster>,
    now: u64,
    tick: u64,
    snapshots: PyramidStore,
}

impl ActivityTimeline {
    pub fn new(params: TimelineParams) -> Self {
        Self {
            snapshots: PyramidStore::new(params.pyramid_base, params.pyramid_level),
            params,
            active: Vec::new(),
            now: 0,
            tick: 0,
        }
    }

    pub fn params(&self) -> &TimelineParams {
        &self.params
    }

    pub fn active(&self) -> &[TweetCluster] {
        &self.active
    }

    pub fn snapshots(&self) -> &PyramidStore {
        &self.snapshots
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    fn boundary_m(&self, tc: &TweetCluster) -> f64 {
        if tc.count() <= 1 {
            self.params.singleton_radius_m
        } else {
            self.params.boundary_factor * tc.spatial_std_m()
        }
    }

    /// Routes one tweet into the closest cluster or a new one, then enforces
    /// the cluster cap.
    pub fn update(&mut self, tweet: &Tweet) {
        self.now = self.now.max(tweet.timestamp);
        let closest = self
            .active
            .iter()
            .enumerate()
            .map(|(i, tc)| (i, tc.distance_to(tweet.lat, tweet.lon)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match closest {
            Some((i, dist)) if dist <= self.boundary_m(&self.active[i]) => self.active[i].absorb(tweet),
            _ => self.active.push(TweetCluster::from_tweet(tweet)),
        }
        self.enforce_cap();
    }

    fn enforce_cap(&mut self) {
        if self.active.len() <= self.params.max_clusters {
            return;
        }
        let now = self.now as f64;
        let (age, min_size) = (self.params.stale_age_s as f64, self.params.stale_min_size);
        self.active
            .retain(|tc| !(now - tc.mean_time() > age && tc.count() < min_size));
        while self.active.len() > self.params.max_clusters.max(1) {
            let mut best = (f64::INFINITY, 0, 1);
            for i in 0..self.active.len() {
                let (lat, lon) = self.active[i].center();
                for j in i + 1..self.active.len() {
                    let d = self.active[j].distance_to(lat, lon);
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
            }
            let (_, i, j) = best;
            let absorbed = self.active.remove(j);
            self.active[i].merge_from(&absorbed);
        }
    }

    /// Stores the current clustering as the next tick's snapshot.
    pub fn snapshot(&mut self, timestamp: u64) {
        self.tick += 1;
        self.snapshots.insert(Snapshot {
            tick: self.tick,
            timestamp,
            clusters: Arc::new(self.active.clone()),
        });
    }

    pub fn retrieve_snapshot(&self, t: u64) -> Result<&Snapshot> {
        self.snapshots.retrieve(t)
    }
}
