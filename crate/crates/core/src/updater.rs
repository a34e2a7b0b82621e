//! Incremental maintenance of the authority clustering across window shifts.
//!
//! Every window tweet keeps its incoming neighbor terms sorted by source id,
//! so re-summing a changed neighborhood adds the same floats in the same order
//! as a from-scratch pass. A shift touches only tweets whose neighborhood
//! changed, whose neighbors' authority changed, or whose ascent path runs
//! through a tweet whose local pivot moved.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::candidate::{beats, neighbor_term, sum_terms, Assignment, CandidateEvent, ClusterParams, WindowTweet};
use crate::error::{Error, Result};
use crate::geo::SpatialGrid;
use crate::ingest::{Tweet, WindowDiff};
use crate::keyword_graph::{KeywordBag, KeywordGraph, KeywordId, VicinitySource};

type Slot = u32;

#[derive(Debug)]
struct Node {
    wt: WindowTweet,
    /// Incoming terms `(source, G * S)`, sorted by source tweet id.
    nbrs: Vec<(Slot, f64)>,
    /// Tweets whose neighborhood contains this one.
    out: HashSet<Slot>,
    authority: f64,
    local_pivot: Slot,
    pivot: Slot,
    /// Tweets whose local pivot is this one.
    children: HashSet<Slot>,
    /// Pivot id of the group this tweet is filed under.
    group: Option<String>,
}

/// Work done by one shift.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShiftDelta {
    pub inserted: usize,
    pub removed: usize,
    /// Tweets whose incoming terms were touched.
    pub dirty: usize,
    /// Tweets whose local pivot changed (inserted tweets included).
    pub mutated: usize,
    /// Tweets whose pivot was recomputed.
    pub reascended: usize,
    /// Pivot ids of groups that gained or lost members.
    pub touched_groups: BTreeSet<String>,
}

#[derive(Debug)]
pub struct DetectorState {
    params: ClusterParams,
    nodes: Vec<Option<Node>>,
    free: Vec<Slot>,
    by_id: HashMap<String, Slot>,
    grid: SpatialGrid<Slot>,
    by_keyword: HashMap<KeywordId, HashSet<Slot>>,
    groups: BTreeMap<String, BTreeMap<String, Arc<Tweet>>>,
}

impl DetectorState {
    pub fn new(params: ClusterParams) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            free: Vec::new(),
            by_id: HashMap::new(),
            grid: SpatialGrid::new(params.bandwidth_m),
            by_keyword: HashMap::new(),
            groups: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    fn node(&self, s: Slot) -> &Node {
        self.nodes[s as usize].as_ref().expect("live slot")
    }

    fn node_mut(&mut self, s: Slot) -> &mut Node {
        self.nodes[s as usize].as_mut().expect("live slot")
    }

    fn id(&self, s: Slot) -> &str {
        self.node(s).wt.id()
    }

    /// Sets or clears the term `from -> to`. Returns whether anything changed.
    fn set_term(&mut self, from: Slot, to: Slot, term: Option<f64>) -> bool {
        let mut nb = std::mem::take(&mut self.node_mut(to).nbrs);
        let pos = {
            let key = self.id(from);
            nb.binary_search_by(|&(s, _)| self.id(s).cmp(key))
        };
        let changed = match (pos, term) {
            (Ok(i), Some(t)) => {
                let c = nb[i].1.to_bits() != t.to_bits();
                nb[i].1 = t;
                c
            }
            (Ok(i), None) => {
                nb.remove(i);
                true
            }
            (Err(i), Some(t)) => {
                nb.insert(i, (from, t));
                true
            }
            (Err(_), None) => false,
        };
        self.node_mut(to).nbrs = nb;
        if term.is_some() {
            self.node_mut(from).out.insert(to);
        } else {
            self.node_mut(from).out.remove(&to);
        }
        changed
    }

    fn spatial_candidates(&self, s: Slot) -> Vec<Slot> {
        let t = &self.node(s).wt.tweet;
        let mut out = Vec::new();
        self.grid.for_each_candidate(t.lat, t.lon, |c| out.push(c));
        out
    }

    fn term<V: VicinitySource + ?Sized>(&self, vics: &V, from: Slot, to: Slot) -> Option<f64> {
        neighbor_term(vics, &self.node(from).wt, &self.node(to).wt, &self.params)
    }

    /// Applies one window shift. `graph` and `vics` must already reflect the
    /// inserted tweets; `refreshed` lists keywords whose vicinity was
    /// recomputed since the previous call.
    pub fn apply<V: VicinitySource + ?Sized>(
        &mut self,
        graph: &KeywordGraph,
        vics: &V,
        diff: &WindowDiff,
        refreshed: &BTreeSet<KeywordId>,
    ) -> Result<ShiftDelta> {
        let mut removed: Vec<Slot> = Vec::with_capacity(diff.removed.len());
        for t in &diff.removed {
            let s = *self
                .by_id
                .get(&t.id)
                .ok_or_else(|| Error::InconsistentDiff(format!("removed tweet {} is not in the window", t.id)))?;
            removed.push(s);
        }
        let mut bags = Vec::with_capacity(diff.inserted.len());
        let mut seen = HashSet::new();
        for t in &diff.inserted {
            if self.by_id.contains_key(&t.id) || !seen.insert(t.id.as_str()) {
                return Err(Error::InconsistentDiff(format!("inserted tweet {} is already in the window", t.id)));
            }
            bags.push(KeywordBag::resolve(graph, &t.keywords)?);
        }
        let removed_set: HashSet<Slot> = removed.iter().copied().collect();
        let mut dirty: BTreeSet<Slot> = BTreeSet::new();
        let mut touched_groups = BTreeSet::new();

        // removals
        for &r in &removed {
            let outs = std::mem::take(&mut self.node_mut(r).out);
            for d in outs {
                if d == r || removed_set.contains(&d) {
                    continue;
                }
                self.set_term(r, d, None);
                dirty.insert(d);
            }
            let incoming = std::mem::take(&mut self.node_mut(r).nbrs);
            for (c, _) in incoming {
                if c != r {
                    if let Some(n) = self.nodes[c as usize].as_mut() {
                        n.out.remove(&r);
                    }
                }
            }
            let parent = self.node(r).local_pivot;
            if parent != r {
                if let Some(p) = self.nodes[parent as usize].as_mut() {
                    p.children.remove(&r);
                }
            }
            let (id, lat, lon, group, kws): (String, f64, f64, Option<String>, Vec<KeywordId>) = {
                let n = self.node(r);
                (
                    n.wt.tweet.id.clone(),
                    n.wt.tweet.lat,
                    n.wt.tweet.lon,
                    n.group.clone(),
                    n.wt.bag.distinct().collect(),
                )
            };
            if let Some(g) = group {
                self.leave_group(&g, &id);
                touched_groups.insert(g);
            }
            self.grid.remove(lat, lon, r);
            for k in kws {
                if let Some(set) = self.by_keyword.get_mut(&k) {
                    set.remove(&r);
                    if set.is_empty() {
                        self.by_keyword.remove(&k);
                    }
                }
            }
            self.by_id.remove(&id);
        }

        // refreshed vicinities change every outgoing term of the tweets using them
        let mut stale_sources: BTreeSet<Slot> = BTreeSet::new();
        for k in refreshed {
            if let Some(slots) = self.by_keyword.get(k) {
                stale_sources.extend(slots.iter().copied());
            }
        }
        for x in stale_sources {
            for y in self.spatial_candidates(x) {
                let t = self.term(vics, x, y);
                if self.set_term(x, y, t) {
                    dirty.insert(y);
                }
            }
        }

        // insertions
        let mut inserted: Vec<Slot> = Vec::with_capacity(diff.inserted.len());
        for (t, bag) in diff.inserted.iter().zip(bags) {
            let node = Node {
                wt: WindowTweet {
                    tweet: Arc::clone(t),
                    bag,
                },
                nbrs: Vec::new(),
                out: HashSet::new(),
                authority: 0.0,
                local_pivot: 0,
                pivot: 0,
                children: HashSet::new(),
                group: None,
            };
            let s = match self.free.pop() {
                Some(s) => {
                    self.nodes[s as usize] = Some(node);
                    s
                }
                None => {
                    self.nodes.push(Some(node));
                    (self.nodes.len() - 1) as Slot
                }
            };
            self.by_id.insert(t.id.clone(), s);
            self.grid.insert(t.lat, t.lon, s);
            for k in self.node(s).wt.bag.distinct().collect::<Vec<_>>() {
                self.by_keyword.entry(k).or_default().insert(s);
            }
            inserted.push(s);
        }
        let inserted_set: HashSet<Slot> = inserted.iter().copied().collect();
        for &c in &inserted {
            for y in self.spatial_candidates(c) {
                let t = self.term(vics, y, c);
                self.set_term(y, c, t);
                if !inserted_set.contains(&y) {
                    let t = self.term(vics, c, y);
                    if self.set_term(c, y, t) {
                        dirty.insert(y);
                    }
                }
            }
        }

        // authority
        let mut changed: Vec<Slot> = inserted.clone();
        for &d in dirty.iter().chain(inserted.iter()) {
            let a = sum_terms(self.node(d).nbrs.iter().map(|&(_, t)| t));
            let n = self.node_mut(d);
            if !inserted_set.contains(&d) && n.authority.to_bits() != a.to_bits() {
                changed.push(d);
            }
            n.authority = a;
        }

        // local pivots
        let mut visit: BTreeSet<Slot> = dirty.iter().chain(inserted.iter()).copied().collect();
        for &c in &changed {
            visit.extend(self.node(c).out.iter().copied());
        }
        let mut mutated: Vec<Slot> = Vec::new();
        for d in visit {
            let l = self.argmax_neighbor(d);
            let old = self.node(d).local_pivot;
            let fresh = inserted_set.contains(&d);
            if !fresh && l == old {
                continue;
            }
            if !fresh && old != d {
                if let Some(p) = self.nodes[old as usize].as_mut() {
                    p.children.remove(&d);
                }
            }
            if l != d {
                self.node_mut(l).children.insert(d);
            }
            self.node_mut(d).local_pivot = l;
            mutated.push(d);
        }

        // pivots below every moved link
        let mut affected: HashSet<Slot> = HashSet::new();
        let mut queue: VecDeque<Slot> = mutated.iter().copied().collect();
        while let Some(x) = queue.pop_front() {
            if affected.insert(x) {
                queue.extend(self.node(x).children.iter().copied());
            }
        }
        let mut done: HashSet<Slot> = HashSet::new();
        let mut order: Vec<Slot> = affected.iter().copied().collect();
        order.sort_unstable();
        let mut path = Vec::new();
        for &x in &order {
            let mut cur = x;
            while affected.contains(&cur) && !done.contains(&cur) && self.node(cur).local_pivot != cur {
                path.push(cur);
                cur = self.node(cur).local_pivot;
                assert!(path.len() <= self.len(), "authority ascent did not terminate");
            }
            let root = if affected.contains(&cur) && !done.contains(&cur) {
                self.node_mut(cur).pivot = cur;
                done.insert(cur);
                cur
            } else {
                self.node(cur).pivot
            };
            for p in path.drain(..) {
                self.node_mut(p).pivot = root;
                done.insert(p);
            }
        }
        for &x in &order {
            let key = self.id(self.node(x).pivot).to_string();
            let current = self.node(x).group.clone();
            if current.as_deref() == Some(key.as_str()) {
                continue;
            }
            let tweet = Arc::clone(&self.node(x).wt.tweet);
            if let Some(g) = current {
                self.leave_group(&g, &tweet.id);
                touched_groups.insert(g);
            }
            self.groups.entry(key.clone()).or_default().insert(tweet.id.clone(), tweet);
            self.node_mut(x).group = Some(key.clone());
            touched_groups.insert(key);
        }

        for &r in &removed {
            self.nodes[r as usize] = None;
            self.free.push(r);
        }
        Ok(ShiftDelta {
            inserted: inserted.len(),
            removed: removed.len(),
            dirty: dirty.len(),
            mutated: mutated.len(),
            reascended: affected.len(),
            touched_groups,
        })
    }

    fn leave_group(&mut self, group: &str, id: &str) {
        if let Some(members) = self.groups.get_mut(group) {
            members.remove(id);
            if members.is_empty() {
                self.groups.remove(group);
            }
        }
    }

    fn argmax_neighbor(&self, d: Slot) -> Slot {
        let nbrs = &self.node(d).nbrs;
        let mut best = nbrs[0].0;
        for &(c, _) in &nbrs[1..] {
            let (nc, nb) = (self.node(c), self.node(best));
            if beats(nc.authority, nc.wt.id(), nb.authority, nb.wt.id()) {
                best = c;
            }
        }
        best
    }

    pub fn assignments(&self) -> BTreeMap<String, Assignment> {
        self.by_id
            .iter()
            .map(|(id, &s)| {
                let n = self.node(s);
                (
                    id.clone(),
                    Assignment {
                        authority: n.authority,
                        local_pivot: self.id(n.local_pivot).to_string(),
                        pivot: self.id(n.pivot).to_string(),
                    },
                )
            })
            .collect()
    }

    /// Groups of at least `min_support` tweets, ordered by pivot id.
    pub fn candidates(&self, created_at: u64) -> Vec<CandidateEvent> {
        self.groups
            .iter()
            .filter(|(_, m)| m.len() >= self.params.min_support.max(1))
            .map(|(pivot, members)| CandidateEvent {
                pivot: Arc::clone(&members[pivot]),
                members: members.values().cloned().collect(),
                created_at,
            })
            .collect()
    }

    /// Ids of the tweets whose terms flow into `id`, in id order.
    pub fn neighborhood(&self, id: &str) -> Option<Vec<&str>> {
        let n = self.node(*self.by_id.get(id)?);
        Some(n.nbrs.iter().map(|&(s, _)| self.id(s)).collect())
    }

    /// Ids of the tweets whose neighborhood contains `id`, in id order.
    pub fn reverse_neighborhood(&self, id: &str) -> Option<BTreeSet<&str>> {
        let n = self.node(*self.by_id.get(id)?);
        Some(n.out.iter().map(|&s| self.id(s)).collect())
    }

    /// Number of groups regardless of support.
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }
}
