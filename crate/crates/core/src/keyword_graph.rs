//! Keyword co-occurrence graph and random-walk-with-restart vicinities.
//!
//! Edges count how many tweets contained both endpoints. A keyword's vicinity
//! is the set of keywords reached by a truncated push-style RWR from it; the
//! pairwise semantic score between two tweets averages vicinity scores over
//! their keyword pairs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type KeywordId = u32;

/// Undirected weighted co-occurrence graph over an interned vocabulary.
#[derive(Debug, Clone, Default)]
pub struct KeywordGraph {
    names: Vec<String>,
    index: HashMap<String, KeywordId>,
    adjacency: Vec<BTreeMap<KeywordId, u64>>,
    strength: Vec<u64>,
}

impl PartialEq for KeywordGraph {
    /// Graphs are equal when they hold the same keywords and the same
    /// weighted edges, regardless of interning order.
    fn eq(&self, other: &Self) -> bool {
        self.names.len() == other.names.len()
            && self.named_edges() == other.named_edges()
            && self.names.iter().all(|n| other.index.contains_key(n))
    }
}

impl KeywordGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, keyword: &str) -> Option<KeywordId> {
        self.index.get(keyword).copied()
    }

    pub fn name(&self, id: KeywordId) -> &str {
        &self.names[id as usize]
    }

    fn intern(&mut self, keyword: &str) -> KeywordId {
        if let Some(&id) = self.index.get(keyword) {
            return id;
        }
        let id = self.names.len() as KeywordId;
        self.names.push(keyword.to_owned());
        self.index.insert(keyword.to_owned(), id);
        self.adjacency.push(BTreeMap::new());
        self.strength.push(0);
        id
    }

    fn bump(&mut self, a: KeywordId, b: KeywordId, by: u64) {
        *self.adjacency[a as usize].entry(b).or_insert(0) += by;
        *self.adjacency[b as usize].entry(a).or_insert(0) += by;
        self.strength[a as usize] += by;
        self.strength[b as usize] += by;
    }

    /// Adds one tweet's keywords: every unordered pair of distinct keywords
    /// gains weight 1, and lone keywords become isolated nodes.
    pub fn observe(&mut self, keywords: &[String]) {
        let distinct: BTreeSet<KeywordId> = keywords.iter().map(|k| self.intern(k)).collect();
        let ids: Vec<KeywordId> = distinct.into_iter().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                self.bump(a, b, 1);
            }
        }
    }

    pub fn weight(&self, u: KeywordId, v: KeywordId) -> u64 {
        self.adjacency
            .get(u as usize)
            .and_then(|adj| adj.get(&v))
            .copied()
            .unwrap_or(0)
    }

    pub fn strength(&self, u: KeywordId) -> u64 {
        self.strength.get(u as usize).copied().unwrap_or(0)
    }

    pub fn neighbors(&self, u: KeywordId) -> impl Iterator<Item = (KeywordId, u64)> + '_ {
        self.adjacency[u as usize].iter().map(|(&v, &w)| (v, w))
    }

    /// Probability of stepping from `u` to `v`; `None` when `u` is unknown or
    /// isolated.
    pub fn transition_probability(&self, u: KeywordId, v: KeywordId) -> Option<f64> {
        let s = self.strength(u);
        if s == 0 {
            return None;
        }
        Some(self.weight(u, v) as f64 / s as f64)
    }

    /// Edges keyed by keyword name with the smaller name first.
    pub fn named_edges(&self) -> BTreeMap<(String, String), u64> {
        let mut out = BTreeMap::new();
        for (u, adj) in self.adjacency.iter().enumerate() {
            for (&v, &w) in adj {
                let (a, b) = (&self.names[u], &self.names[v as usize]);
                if a < b {
                    out.insert((a.clone(), b.clone()), w);
                }
            }
        }
        out
    }

    /// Serializes as one keyword per line in interning order, followed by
    /// `u v weight` lines for every edge (`u` interned before `v`).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        for (u, adj) in self.adjacency.iter().enumerate() {
            for (&v, &w) in adj.range(u as KeywordId + 1..) {
                writeln!(out, "{} {} {}", self.names[u], self.names[v as usize], w)
                    .expect("writing to a String");
            }
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut graph = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                [name] => {
                    if graph.index.contains_key(*name) {
                        return Err(corrupt(lineno, "repeated keyword"));
                    }
                    graph.intern(name);
                }
                [u, v, w] => {
                    let (u, v) = match (graph.id(u), graph.id(v)) {
                        (Some(u), Some(v)) if u != v => (u, v),
                        _ => return Err(corrupt(lineno, "edge references unknown keyword")),
                    };
                    let w: u64 = w.parse().map_err(|_| corrupt(lineno, "bad weight"))?;
                    if w == 0 || graph.weight(u, v) != 0 {
                        return Err(corrupt(lineno, "zero or repeated edge"));
                    }
                    graph.bump(u, v, w);
                }
                _ => return Err(corrupt(lineno, "unexpected field count")),
            }
        }
        Ok(graph)
    }

    /// Push-based approximate RWR from `q`.
    ///
    /// Residual and score of `q` start at `alpha`; the node with the largest
    /// residual is pushed while that residual is at least `alpha * epsilon`,
    /// and after that while the leftover residual mass could still move some
    /// score by more than `epsilon`. Every returned score underestimates the
    /// exact RWR score by at most `epsilon`.
    pub fn approximate_rwr(&self, q: KeywordId, alpha: f64, epsilon: f64) -> Result<Vicinity> {
        check_rwr_params(alpha, epsilon)?;
        self.transitions(alpha).approximate_rwr(q, epsilon)
    }

    /// Freezes the push coefficients `(1 - alpha) * w(u,v) / strength(u)`.
    pub fn transitions(&self, alpha: f64) -> Transitions {
        let mut offsets = Vec::with_capacity(self.names.len() + 1);
        let mut targets = Vec::new();
        let mut coef = Vec::new();
        offsets.push(0);
        for (u, row) in self.adjacency.iter().enumerate() {
            let s_u = self.strength[u];
            for (&v, &w) in row {
                targets.push(v);
                coef.push((1.0 - alpha) * (w as f64 / s_u as f64));
            }
            offsets.push(targets.len());
        }
        Transitions {
            alpha,
            offsets,
            targets,
            coef,
        }
    }
}

fn check_rwr_params(alpha: f64, epsilon: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0,1), got {alpha}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Push coefficients of one graph state in compressed-row form.
#[derive(Debug, Clone)]
pub struct Transitions {
    alpha: f64,
    offsets: Vec<usize>,
    targets: Vec<KeywordId>,
    coef: Vec<f64>,
}

impl Transitions {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn approximate_rwr(&self, q: KeywordId, epsilon: f64) -> Result<Vicinity> {
        let alpha = self.alpha;
        check_rwr_params(alpha, epsilon)?;
        let n = self.len();
        if q as usize >= n {
            return Err(Error::UnknownKeyword(format!("#{q}")));
        }
        let threshold = alpha * epsilon;
        // Residual mass r left at termination is worth at most
        // (1 - alpha) / alpha * sum(r) of score at any single node.
        let slack = epsilon * alpha / (1.0 - alpha);
        let mut score = vec![0.0f64; n];
        let mut residual = vec![0.0f64; n];
        score[q as usize] = alpha;
        residual[q as usize] = alpha;
        let mut pending = alpha;
        let mut queue = ResidualQueue::new(n);
        queue.raise(q, &residual);
        while let Some(u) = queue.peek() {
            let current = residual[u as usize];
            if current < threshold && pending <= slack {
                break;
            }
            queue.pop(&residual);
            let u = u as usize;
            let row = self.offsets[u]..self.offsets[u + 1];
            for (&v, &c) in self.targets[row.clone()].iter().zip(&self.coef[row]) {
                let delta = c * current;
                score[v as usize] += delta;
                residual[v as usize] += delta;
                pending += delta;
                if delta > 0.0 {
                    queue.raise(v, &residual);
                }
            }
            residual[u] = 0.0;
            pending = (pending - current).max(0.0);
        }
        let scores: Vec<(KeywordId, f64)> = score
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s > 0.0)
            .map(|(k, s)| (k as KeywordId, s))
            .collect();
        Ok(Vicinity { source: q, scores })
    }
}

fn corrupt(lineno: usize, what: &str) -> Error {
    Error::Corrupt("graph".into(), format!("line {}: {what}", lineno + 1))
}

/// Max-heap over keyword ids ordered by residual, ties to the smaller id.
/// Keys only grow while queued, so a raise is a sift-up.
struct ResidualQueue {
    heap: Vec<KeywordId>,
    pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl ResidualQueue {
    fn new(n: usize) -> Self {
        Self {
            heap: Vec::new(),
            pos: vec![ABSENT; n],
        }
    }

    fn above(a: KeywordId, b: KeywordId, key: &[f64]) -> bool {
        match key[a as usize].total_cmp(&key[b as usize]) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a < b,
        }
    }

    fn place(&mut self, i: usize, v: KeywordId) {
        self.heap[i] = v;
        self.pos[v as usize] = i as u32;
    }

    fn raise(&mut self, v: KeywordId, key: &[f64]) {
        let mut i = match self.pos[v as usize] {
            ABSENT => {
                self.heap.push(v);
                self.heap.len() - 1
            }
            p => p as usize,
        };
        while i > 0 {
            let parent = (i - 1) / 2;
            let p = self.heap[parent];
            if !Self::above(v, p, key) {
                break;
            }
            self.place(i, p);
            i = parent;
        }
        self.place(i, v);
    }

    fn peek(&self) -> Option<KeywordId> {
        self.heap.first().copied()
    }

    fn pop(&mut self, key: &[f64]) -> Option<KeywordId> {
        let top = *self.heap.first()?;
        self.pos[top as usize] = ABSENT;
        let last = self.heap.pop().expect("non-empty");
        if !self.heap.is_empty() {
            let n = self.heap.len();
            let mut i = 0;
            loop {
                let (l, r) = (2 * i + 1, 2 * i + 2);
                let mut best = last;
                let mut at = i;
                if l < n && Self::above(self.heap[l], best, key) {
                    best = self.heap[l];
                    at = l;
                }
                if r < n && Self::above(self.heap[r], best, key) {
                    best = self.heap[r];
                    at = r;
                }
                if at == i {
                    break;
                }
                self.place(i, best);
                i = at;
            }
            self.place(i, last);
        }
        Some(top)
    }
}

/// RWR scores reached from one source keyword, sorted by keyword id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vicinity {
    pub source: KeywordId,
    pub scores: Vec<(KeywordId, f64)>,
}

impl Vicinity {
    pub fn score(&self, v: KeywordId) -> f64 {
        match self.scores.binary_search_by_key(&v, |&(k, _)| k) {
            Ok(i) => self.scores[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().map(|&(_, s)| s).sum()
    }
}

/// Anything that can hand out a vicinity per keyword.
pub trait VicinitySource {
    fn vicinity(&self, keyword: KeywordId) -> Option<&Vicinity>;
}

impl VicinitySource for HashMap<KeywordId, Vicinity> {
    fn vicinity(&self, keyword: KeywordId) -> Option<&Vicinity> {
        self.get(&keyword)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RwrParams {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for RwrParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedVicinity {
    strength_at: u64,
    vicinity: Arc<Vicinity>,
}

/// Vicinities cached per keyword. An entry is recomputed on refresh once the
/// keyword's incident weight has drifted by more than `drift` relative to the
/// value it had when the entry was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VicinityCache {
    params: RwrParams,
    drift: f64,
    entries: BTreeMap<KeywordId, CachedVicinity>,
}

impl VicinityCache {
    pub fn new(params: RwrParams, drift: f64) -> Self {
        Self {
            params,
            drift,
            entries: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> RwrParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, keyword: KeywordId) -> Option<&Arc<Vicinity>> {
        self.entries.get(&keyword).map(|e| &e.vicinity)
    }

    fn is_stale(&self, graph: &KeywordGraph, keyword: KeywordId) -> bool {
        match self.entries.get(&keyword) {
            None => true,
            Some(entry) => {
                let now = graph.strength(keyword);
                let then = entry.strength_at;
                if then == 0 {
                    now != 0
                } else {
                    (now as f64 - then as f64).abs() > self.drift * then as f64
                }
            }
        }
    }

    /// Recomputes missing or drifted vicinities for `keywords` and returns the
    /// keywords whose entry changed.
    pub fn refresh(
        &mut self,
        graph: &KeywordGraph,
        keywords: impl IntoIterator<Item = KeywordId>,
    ) -> BTreeSet<KeywordId> {
        let mut changed = BTreeSet::new();
        let mut table: Option<Transitions> = None;
        for kw in keywords {
            if changed.contains(&kw) || !self.is_stale(graph, kw) {
                continue;
            }
            let vicinity = table
                .get_or_insert_with(|| graph.transitions(self.params.alpha))
                .approximate_rwr(kw, self.params.epsilon)
                .expect("refresh is only called with interned keywords and validated params");
            self.entries.insert(
                kw,
                CachedVicinity {
                    strength_at: graph.strength(kw),
                    vicinity: Arc::new(vicinity),
                },
            );
            changed.insert(kw);
        }
        changed
    }
}

impl VicinitySource for VicinityCache {
    fn vicinity(&self, keyword: KeywordId) -> Option<&Vicinity> {
        self.entries.get(&keyword).map(|e| e.vicinity.as_ref())
    }
}

/// A tweet's keyword multiset as sorted `(keyword, multiplicity)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordBag {
    counts: Vec<(KeywordId, u32)>,
    total: u32,
}

impl KeywordBag {
    pub fn from_ids(ids: impl IntoIterator<Item = KeywordId>) -> Self {
        let mut map: BTreeMap<KeywordId, u32> = BTreeMap::new();
        for id in ids {
            *map.entry(id).or_insert(0) += 1;
        }
        let total = map.values().sum();
        Self {
            counts: map.into_iter().collect(),
            total,
        }
    }

    /// Resolves keyword strings against the graph; unknown keywords are an error.
    pub fn resolve(graph: &KeywordGraph, keywords: &[String]) -> Result<Self> {
        let ids = keywords
            .iter()
            .map(|k| graph.id(k).ok_or_else(|| Error::UnknownKeyword(k.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_ids(ids))
    }

    pub fn counts(&self) -> &[(KeywordId, u32)] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct(&self) -> impl Iterator<Item = KeywordId> + '_ {
        self.counts.iter().map(|&(k, _)| k)
    }
}

/// Mean RWR affinity from the keywords of `from` to those of `to`, counting
/// multiplicity. Keywords without a vicinity contribute nothing.
pub fn semantic_score<V: VicinitySource + ?Sized>(
    vicinities: &V,
    from: &KeywordBag,
    to: &KeywordBag,
) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyKeywords);
    }
    Ok(semantic_score_unchecked(vicinities, from, to))
}

pub(crate) fn semantic_score_unchecked<V: VicinitySource + ?Sized>(
    vicinities: &V,
    from: &KeywordBag,
    to: &KeywordBag,
) -> f64 {
    let mut sum = 0.0;
    for &(u, cu) in &from.counts {
        let Some(vic) = vicinities.vicinity(u) else {
            continue;
        };
        let mut inner = 0.0;
        for &(v, cv) in &to.counts {
            inner += cv as f64 * vic.score(v);
        }
        sum += cu as f64 * inner;
    }
    sum / (from.total as f64 * to.total as f64)
}
