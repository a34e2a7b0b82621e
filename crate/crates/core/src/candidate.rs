//! Geo-topical authority and pivot seeking over one query window.
//!
//! A tweet's neighborhood holds every window tweet inside the kernel support
//! whose semantic score towards it beats the threshold, plus the tweet itself.
//! Authority sums `G * S` over the neighborhood. Each tweet points at its
//! highest-authority neighbor (ties to the smallest id) and following those
//! links ends at a pivot; tweets sharing a pivot form one cluster.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geo::{epanechnikov, haversine_m, SpatialGrid};
use crate::ingest::Tweet;
use crate::keyword_graph::{semantic_score_unchecked, KeywordBag, VicinitySource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Kernel support radius in meters.
    pub bandwidth_m: f64,
    /// Semantic threshold; neighbors need a score strictly above it.
    pub delta: f64,
    /// Smallest cluster kept as a candidate.
    pub min_support: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            bandwidth_m: 2_000.0,
            delta: 0.02,
            min_support: 3,
        }
    }
}

/// A window tweet with its keywords resolved against the graph.
#[derive(Debug, Clone)]
pub struct WindowTweet {
    pub tweet: Arc<Tweet>,
    pub bag: KeywordBag,
}

impl WindowTweet {
    pub fn id(&self) -> &str {
        &self.tweet.id
    }
}

/// Epanechnikov influence of `from` on `to` over great-circle distance.
pub fn geographic_influence(from: &Tweet, to: &Tweet, bandwidth_m: f64) -> f64 {
    epanechnikov(haversine_m(from.lat, from.lon, to.lat, to.lon), bandwidth_m)
}

/// Energy `from` sends to `to`, or `None` when `from` is not in `to`'s
/// neighborhood. A tweet is always its own neighbor.
pub fn neighbor_term<V: VicinitySource + ?Sized>(
    vicinities: &V,
    from: &WindowTweet,
    to: &WindowTweet,
    params: &ClusterParams,
) -> Option<f64> {
    if from.tweet.id == to.tweet.id {
        return Some(semantic_score_unchecked(vicinities, &from.bag, &to.bag));
    }
    let g = geographic_influence(&from.tweet, &to.tweet, params.bandwidth_m);
    if g <= 0.0 {
        return None;
    }
    let s = semantic_score_unchecked(vicinities, &from.bag, &to.bag);
    (s > params.delta).then_some(g * s)
}

/// Sums neighbor terms in the order given. Callers pass terms sorted by
/// tweet id so every code path adds the same floats in the same order.
pub(crate) fn sum_terms(terms: impl IntoIterator<Item = f64>) -> f64 {
    terms.into_iter().fold(0.0, |acc, t| acc + t)
}

/// `(authority, id)` ordering used for argmax: higher authority wins, then the
/// smaller id.
pub(crate) fn beats(a_auth: f64, a_id: &str, b_auth: f64, b_id: &str) -> bool {
    a_auth > b_auth || (a_auth == b_auth && a_id < b_id)
}

/// Brute-force neighborhood of `window[d]` (indices into `window`).
pub fn neighborhood<V: VicinitySource + ?Sized>(
    window: &[WindowTweet],
    d: usize,
    vicinities: &V,
    params: &ClusterParams,
) -> Vec<usize> {
    (0..window.len())
        .filter(|&c| neighbor_term(vicinities, &window[c], &window[d], params).is_some())
        .collect()
}

/// Authority of `window[d]` given its neighborhood.
pub fn authority<V: VicinitySource + ?Sized>(
    window: &[WindowTweet],
    d: usize,
    nbhd: &[usize],
    vicinities: &V,
    params: &ClusterParams,
) -> f64 {
    let mut order: Vec<usize> = nbhd.to_vec();
    order.sort_by(|&a, &b| window[a].id().cmp(window[b].id()));
    sum_terms(
        order
            .iter()
            .filter_map(|&c| neighbor_term(vicinities, &window[c], &window[d], params)),
    )
}

/// Neighbor with the largest authority, ties to the smallest id.
pub fn local_pivot(window: &[WindowTweet], nbhd: &[usize], authorities: &[f64]) -> usize {
    let mut best = nbhd[0];
    for &c in &nbhd[1..] {
        if beats(authorities[c], window[c].id(), authorities[best], window[best].id()) {
            best = c;
        }
    }
    best
}

/// Batch clustering result for one window. Indices follow tweet-id order.
#[derive(Debug, Clone)]
pub struct AuthorityState {
    tweets: Vec<Arc<Tweet>>,
    neighborhoods: Vec<Vec<usize>>,
    authority: Vec<f64>,
    local_pivot: Vec<usize>,
    pivot: Vec<usize>,
    hops: Vec<usize>,
}

/// Per-tweet clustering outcome in a form both the batch and the incremental
/// paths can produce.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub authority: f64,
    pub local_pivot: String,
    pub pivot: String,
}

impl PartialEq for Assignment {
    fn eq(&self, other: &Self) -> bool {
        self.authority.to_bits() == other.authority.to_bits()
            && self.local_pivot == other.local_pivot
            && self.pivot == other.pivot
    }
}

impl AuthorityState {
    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn tweet(&self, i: usize) -> &Arc<Tweet> {
        &self.tweets[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.tweets.binary_search_by(|t| t.id.as_str().cmp(id)).ok()
    }

    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    pub fn authority(&self, i: usize) -> f64 {
        self.authority[i]
    }

    pub fn authorities(&self) -> &[f64] {
        &self.authority
    }

    pub fn local_pivot(&self, i: usize) -> usize {
        self.local_pivot[i]
    }

    pub fn pivot(&self, i: usize) -> usize {
        self.pivot[i]
    }

    /// Number of ascent hops from tweet `i` to its pivot.
    pub fn hops(&self, i: usize) -> usize {
        self.hops[i]
    }

    pub fn assignments(&self) -> BTreeMap<String, Assignment> {
        (0..self.len())
            .map(|i| {
                (
                    self.tweets[i].id.clone(),
                    Assignment {
                        authority: self.authority[i],
                        local_pivot: self.tweets[self.local_pivot[i]].id.clone(),
                        pivot: self.tweets[self.pivot[i]].id.clone(),
                    },
                )
            })
            .collect()
    }

    /// Members per pivot, both as indices.
    pub fn clusters(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            out.entry(self.pivot[i]).or_default().push(i);
        }
        out
    }
}

/// Runs the full pivot-seeking pass over `window` from scratch.
pub fn seek_pivots<V: VicinitySource + ?Sized>(
    window: &[WindowTweet],
    vicinities: &V,
    params: &ClusterParams,
) -> AuthorityState {
    let mut order: Vec<usize> = (0..window.len()).collect();
    order.sort_by(|&a, &b| window[a].id().cmp(window[b].id()));
    let sorted: Vec<&WindowTweet> = order.iter().map(|&i| &window[i]).collect();
    let n = sorted.len();

    let mut grid = SpatialGrid::new(params.bandwidth_m);
    for (i, wt) in sorted.iter().enumerate() {
        grid.insert(wt.tweet.lat, wt.tweet.lon, i);
    }

    let mut neighborhoods = Vec::with_capacity(n);
    let mut authority = Vec::with_capacity(n);
    let mut terms: Vec<(usize, f64)> = Vec::new();
    for to in &sorted {
        terms.clear();
        grid.for_each_candidate(to.tweet.lat, to.tweet.lon, |c| {
            if let Some(t) = neighbor_term(vicinities, sorted[c], to, params) {
                terms.push((c, t));
            }
        });
        terms.sort_unstable_by_key(|&(c, _)| c);
        authority.push(sum_terms(terms.iter().map(|&(_, t)| t)));
        neighborhoods.push(terms.iter().map(|&(c, _)| c).collect::<Vec<_>>());
    }

    let local_pivot: Vec<usize> = neighborhoods
        .iter()
        .map(|nbhd: &Vec<usize>| {
            let mut best = nbhd[0];
            for &c in &nbhd[1..] {
                if beats(authority[c], &sorted[c].tweet.id, authority[best], &sorted[best].tweet.id) {
                    best = c;
                }
            }
            best
        })
        .collect();

    let (pivot, hops) = ascend(&local_pivot);
    AuthorityState {
        tweets: sorted.iter().map(|wt| Arc::clone(&wt.tweet)).collect(),
        neighborhoods,
        authority,
        local_pivot,
        pivot,
        hops,
    }
}

/// Follows local-pivot links to their fixed points, memoizing along the way.
fn ascend(local_pivot: &[usize]) -> (Vec<usize>, Vec<usize>) {
    const UNSET: usize = usize::MAX;
    let n = local_pivot.len();
    let mut pivot = vec![UNSET; n];
    let mut hops = vec![0; n];
    let mut path = Vec::new();
    for start in 0..n {
        let mut cur = start;
        while pivot[cur] == UNSET && local_pivot[cur] != cur {
            path.push(cur);
            cur = local_pivot[cur];
            assert!(path.len() <= n, "authority ascent did not terminate");
        }
        let (root, mut depth) = if pivot[cur] == UNSET {
            pivot[cur] = cur;
            (cur, 0)
        } else {
            (pivot[cur], hops[cur])
        };
        while let Some(p) = path.pop() {
            depth += 1;
            pivot[p] = root;
            hops[p] = depth;
        }
    }
    (pivot, hops)
}

/// A cluster that survived the support filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvent {
    pub pivot: Arc<Tweet>,
    /// Members in id order; includes the pivot.
    pub members: Vec<Arc<Tweet>>,
    pub created_at: u64,
}

impl CandidateEvent {
    pub fn member_ids(&self) -> Vec<&str> {
        self.members.iter().map(|t| t.id.as_str()).collect()
    }
}

/// Groups tweets by pivot and drops groups below `min_support`. Output is
/// ordered by pivot id.
pub fn form_candidates(state: &AuthorityState, min_support: usize, created_at: u64) -> Vec<CandidateEvent> {
    state
        .clusters()
        .into_iter()
        .filter(|(_, members)| members.len() >= min_support.max(1))
        .map(|(p, members)| CandidateEvent {
            pivot: Arc::clone(&state.tweets[p]),
            members: members.iter().map(|&m| Arc::clone(&state.tweets[m])).collect(),
            created_at,
        })
        .collect()
}
