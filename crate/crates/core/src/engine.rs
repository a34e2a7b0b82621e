//! The detection pipeline: one call to [`Engine::step`] per window shift.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::candidate::{form_candidates, seek_pivots, Assignment, AuthorityState, CandidateEvent, ClusterParams, WindowTweet};
use crate::classifier::{extract_features_with, FeatureVector, HistoryProfile, LogRegModel, WindowSummary};
use crate::embedding::{EmbeddingModel, EmbeddingParams};
use crate::error::{Error, Result};
use crate::ingest::{QueryWindow, Tweet};
use crate::keyword_graph::{KeywordBag, KeywordGraph, KeywordId, RwrParams, VicinityCache};
use crate::store::{EventRecord, EventStore, StoredEvent};
use crate::summarizer::{ActivityTimeline, TimelineParams};
use crate::updater::{DetectorState, ShiftDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMode {
    #[default]
    Incremental,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub window_s: u64,
    pub step_s: u64,
    pub mode: DetectionMode,
    pub cluster: ClusterParams,
    pub rwr: RwrParams,
    /// Relative change in a keyword's incident weight that invalidates its
    /// cached vicinity.
    pub vicinity_drift: f64,
    pub timeline: TimelineParams,
    /// Bandwidth for history estimates; defaults to the clustering bandwidth.
    pub estimation_bandwidth_m: Option<f64>,
    pub embedding: EmbeddingParams,
    pub threshold: f64,
    /// Decision for candidates that arrive before any history exists.
    pub cold_start_is_event: bool,
    pub top_keywords: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            window_s: 6 * 3600,
            step_s: 600,
            mode: DetectionMode::Incremental,
            cluster: ClusterParams::default(),
            rwr: RwrParams::default(),
            vicinity_drift: 0.1,
            timeline: TimelineParams::default(),
            estimation_bandwidth_m: None,
            embedding: EmbeddingParams::default(),
            threshold: 0.5,
            cold_start_is_event: false,
            top_keywords: crate::store::DEFAULT_TOP_KEYWORDS,
        }
    }
}

impl EngineConfig {
    pub fn estimation_bandwidth(&self) -> f64 {
        self.estimation_bandwidth_m.unwrap_or(self.cluster.bandwidth_m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.window_s == 0 || self.step_s == 0 {
            return bad("window and step must be positive");
        }
        if !(self.cluster.bandwidth_m > 0.0 && self.cluster.bandwidth_m.is_finite()) {
            return bad("bandwidth must be positive");
        }
        if !(self.cluster.delta >= 0.0) {
            return bad("delta must be non-negative");
        }
        if !(self.rwr.alpha > 0.0 && self.rwr.alpha < 1.0) || !(self.rwr.epsilon > 0.0) {
            return bad("rwr alpha must lie in (0, 1) and epsilon must be positive");
        }
        if !(self.vicinity_drift >= 0.0) {
            return bad("vicinity drift must be non-negative");
        }
        if !(self.estimation_bandwidth() > 0.0) {
            return bad("estimation bandwidth must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if self.embedding.dimension == 0 {
            return bad("embedding dimension must be positive");
        }
        if self.timeline.pyramid_base < 2 {
            return bad("pyramid base must be at least 2");
        }
        Ok(())
    }
}

/// A candidate with its classification.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: CandidateEvent,
    /// `None` when no history was available yet.
    pub features: Option<FeatureVector>,
    pub score: f64,
    pub is_event: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShiftTimings {
    /// Graph, embedding, timeline and vicinity upkeep shared by both modes.
    pub maintenance: Duration,
    /// Neighborhoods, authority, ascent and grouping.
    pub clustering: Duration,
    pub classification: Duration,
}

impl ShiftTimings {
    pub fn detection(&self) -> Duration {
        self.clustering + self.classification
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    pub shift: u64,
    pub window_start: u64,
    pub window_end: u64,
    pub window_tweets: usize,
    pub inserted: usize,
    pub removed: usize,
    pub refreshed_vicinities: usize,
    pub candidates: usize,
    pub events: usize,
    /// Incremental bookkeeping; `None` in batch mode.
    pub delta: Option<ShiftDelta>,
    pub timings: ShiftTimings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub shifts: u64,
    pub last_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    fn record(&mut self, d: Duration) {
        let ms = d.as_secs_f64() * 1e3;
        self.shifts += 1;
        self.last_ms = ms;
        self.max_ms = self.max_ms.max(ms);
        self.mean_ms += (ms - self.mean_ms) / self.shifts as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineStatus {
    pub window_start: u64,
    pub window_end: u64,
    pub window_tweets: usize,
    pub shifts: u64,
    pub candidates: usize,
    pub events: usize,
    pub vocabulary: usize,
    pub cached_vicinities: usize,
    pub active_clusters: usize,
    pub stored_snapshots: usize,
    pub mode: DetectionMode,
    pub latency: LatencyStats,
}

#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    graph: KeywordGraph,
    vicinities: VicinityCache,
    embedding: EmbeddingModel,
    timeline: ActivityTimeline,
    classifier: LogRegModel,
    window: QueryWindow,
    detector: DetectorState,
    batch: Option<AuthorityState>,
    events: EventStore,
    shifts: u64,
    last: Vec<ScoredCandidate>,
    latency: LatencyStats,
}

/// Everything that survives a restart.
#[derive(Debug, Clone)]
pub struct EngineParts {
    pub config: EngineConfig,
    pub graph: KeywordGraph,
    pub vicinities: VicinityCache,
    pub embedding: EmbeddingModel,
    pub timeline: ActivityTimeline,
    pub classifier: LogRegModel,
    pub window: QueryWindow,
    pub events: EventStore,
    pub shifts: u64,
}

impl Engine {
    /// A fresh engine whose empty window ends at `origin`; the first shift
    /// delivers tweets from `origin` on.
    pub fn new(config: EngineConfig, classifier: LogRegModel, origin: u64) -> Result<Self> {
        config.validate()?;
        let window = QueryWindow::new(origin, config.window_s)?;
        Self::from_parts(EngineParts {
            graph: KeywordGraph::new(),
            vicinities: VicinityCache::new(config.rwr, config.vicinity_drift),
            embedding: EmbeddingModel::new(config.embedding),
            timeline: ActivityTimeline::new(config.timeline),
            classifier,
            window,
            events: EventStore::new(),
            shifts: 0,
            config,
        })
    }

    /// Rebuilds an engine from persisted parts. Clustering state is derived
    /// from the window, graph and vicinities, so it is recomputed here.
    pub fn from_parts(parts: EngineParts) -> Result<Self> {
        let EngineParts {
            config,
            graph,
            vicinities,
            embedding,
            timeline,
            mut classifier,
            window,
            events,
            shifts,
        } = parts;
        config.validate()?;
        if classifier.feature_count() != crate::classifier::FEATURE_COUNT {
            return Err(Error::FeatureLength {
                expected: crate::classifier::FEATURE_COUNT,
                got: classifier.feature_count(),
            });
        }
        classifier.threshold = config.threshold;
        let mut engine = Self {
            detector: DetectorState::new(config.cluster),
            batch: None,
            config,
            graph,
            vicinities,
            embedding,
            timeline,
            classifier,
            window,
            events,
            shifts,
            last: Vec::new(),
            latency: LatencyStats::default(),
        };
        let seed = crate::ingest::WindowDiff {
            removed: Vec::new(),
            inserted: engine.window.tweets().cloned().collect(),
        };
        match engine.config.mode {
            DetectionMode::Incremental => {
                engine
                    .detector
                    .apply(&engine.graph, &engine.vicinities, &seed, &BTreeSet::new())?;
            }
            DetectionMode::Batch => engine.batch = Some(engine.run_batch()?),
        }
        Ok(engine)
    }

    pub fn to_parts(&self) -> EngineParts {
        EngineParts {
            config: self.config.clone(),
            graph: self.graph.clone(),
            vicinities: self.vicinities.clone(),
            embedding: self.embedding.clone(),
            timeline: self.timeline.clone(),
            classifier: self.classifier.clone(),
            window: self.window.clone(),
            events: self.events.clone(),
            shifts: self.shifts,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn window(&self) -> &QueryWindow {
        &self.window
    }

    pub fn graph(&self) -> &KeywordGraph {
        &self.graph
    }

    pub fn vicinities(&self) -> &VicinityCache {
        &self.vicinities
    }

    pub fn embedding(&self) -> &EmbeddingModel {
        &self.embedding
    }

    pub fn timeline(&self) -> &ActivityTimeline {
        &self.timeline
    }

    pub fn classifier(&self) -> &LogRegModel {
        &self.classifier
    }

    pub fn events(&self) -> &EventStore {
        &self.events
    }

    pub fn shifts(&self) -> u64 {
        self.shifts
    }

    /// Candidates of the latest shift with their classification.
    pub fn last_candidates(&self) -> &[ScoredCandidate] {
        &self.last
    }

    pub fn assignments(&self) -> BTreeMap<String, Assignment> {
        match self.config.mode {
            DetectionMode::Incremental => self.detector.assignments(),
            DetectionMode::Batch => self.batch.as_ref().map(|b| b.assignments()).unwrap_or_default(),
        }
    }

    pub fn status(&self) -> EngineStatus {
        EngineStatus {
            window_start: self.window.start(),
            window_end: self.window.end(),
            window_tweets: self.window.len(),
            shifts: self.shifts,
            candidates: self.last.len(),
            events: self.events.len(),
            vocabulary: self.graph.len(),
            cached_vicinities: self.vicinities.len(),
            active_clusters: self.timeline.active().len(),
            stored_snapshots: self.timeline.snapshots().len(),
            mode: self.config.mode,
            latency: self.latency,
        }
    }

    fn window_tweets(&self) -> Result<Vec<WindowTweet>> {
        self.window
            .tweets()
            .map(|t| {
                Ok(WindowTweet {
                    tweet: Arc::clone(t),
                    bag: KeywordBag::resolve(&self.graph, &t.keywords)?,
                })
            })
            .collect()
    }

    fn run_batch(&self) -> Result<AuthorityState> {
        let wts = self.window_tweets()?;
        Ok(seek_pivots(&wts, &self.vicinities, &self.config.cluster))
    }

    /// Feeds historical tweets into the keyword graph, the embedding and the
    /// activity timeline without running detection, taking one timeline
    /// snapshot per step. The window moves to end where the history ends, so
    /// `history` must be sorted by timestamp and precede everything the
    /// window has seen.
    pub fn prime(&mut self, history: &[Arc<Tweet>]) -> Result<()> {
        let (Some(first), Some(last)) = (history.first(), history.last()) else {
            return Ok(());
        };
        if self.shifts > 0 || !self.window.is_empty() {
            return Err(Error::InvalidParameter("only a fresh engine can be primed".into()));
        }
        let step = self.config.step_s;
        let mut chunk_end = first.timestamp - first.timestamp % step + step;
        let mut i = 0;
        while i < history.len() {
            let j = i + history[i..].partition_point(|t| t.timestamp < chunk_end);
            let chunk = &history[i..j];
            for t in chunk {
                self.graph.observe(&t.keywords);
            }
            if !chunk.is_empty() {
                let batch: Vec<Vec<&String>> = chunk.iter().map(|t| t.keywords.iter().collect()).collect();
                self.embedding.train_step(&batch);
            }
            for t in chunk {
                self.timeline.update(t);
            }
            self.timeline.snapshot(chunk_end);
            i = j;
            chunk_end += step;
        }
        let end = (last.timestamp + 1).max(self.window.end());
        self.window = QueryWindow::new(end, self.config.window_s)?;
        Ok(())
    }

    /// Shifts the window to end at `new_end`. `buffered` must hold every
    /// undelivered tweet with timestamp below `new_end`.
    pub fn step(&mut self, new_end: u64, buffered: &[Arc<Tweet>]) -> Result<ShiftReport> {
        let started = Instant::now();
        let (next, diff) = self.window.advance(new_end, buffered)?;
        let mut arrivals: Vec<&Arc<Tweet>> = diff.inserted.iter().collect();
        arrivals.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
        for t in &arrivals {
            self.graph.observe(&t.keywords);
        }
        if !arrivals.is_empty() {
            let batch: Vec<&[String]> = arrivals.iter().map(|t| t.keywords.as_slice()).collect();
            let batch: Vec<Vec<&String>> = batch.iter().map(|k| k.iter().collect()).collect();
            self.embedding.train_step(&batch);
        }
        for t in &arrivals {
            self.timeline.update(t);
        }
        self.timeline.snapshot(new_end);
        let keywords: BTreeSet<KeywordId> = next
            .tweets()
            .flat_map(|t| t.keywords.iter().filter_map(|k| self.graph.id(k)))
            .collect();
        let refreshed = self.vicinities.refresh(&self.graph, keywords);
        self.window = next;
        let maintenance = started.elapsed();

        let t_cluster = Instant::now();
        let (candidates, delta) = match self.config.mode {
            DetectionMode::Incremental => {
                let delta = self.detector.apply(&self.graph, &self.vicinities, &diff, &refreshed)?;
                (self.detector.candidates(new_end), Some(delta))
            }
            DetectionMode::Batch => {
                let state = self.run_batch()?;
                let c = form_candidates(&state, self.config.cluster.min_support, new_end);
                self.batch = Some(state);
                (c, None)
            }
        };
        let clustering = t_cluster.elapsed();

        let t_class = Instant::now();
        let scored = self.classify(candidates)?;
        let classification = t_class.elapsed();

        let mut positives = 0;
        for s in &scored {
            if s.is_event {
                positives += 1;
                self.events.upsert(StoredEvent {
                    record: EventRecord::from_candidate(&s.candidate, s.score, new_end, self.config.top_keywords),
                    members: s.candidate.members.clone(),
                });
            }
        }
        self.last = scored;
        self.shifts += 1;
        self.latency.record(started.elapsed());

        Ok(ShiftReport {
            shift: self.shifts,
            window_start: self.window.start(),
            window_end: new_end,
            window_tweets: self.window.len(),
            inserted: diff.inserted.len(),
            removed: diff.removed.len(),
            refreshed_vicinities: refreshed.len(),
            candidates: self.last.len(),
            events: positives,
            delta,
            timings: ShiftTimings {
                maintenance,
                clustering,
                classification,
            },
        })
    }

    fn classify(&self, candidates: Vec<CandidateEvent>) -> Result<Vec<ScoredCandidate>> {
        let history = self
            .timeline
            .retrieve_snapshot(self.window.start())
            .ok()
            .map(|s| Arc::clone(&s.clusters));
        let profile = history.as_deref().map(|h| HistoryProfile::new(h, &self.embedding));
        let summary = WindowSummary::new(self.window.tweets(), &self.embedding, self.config.cluster.bandwidth_m);
        candidates
            .into_iter()
            .map(|candidate| {
                match extract_features_with(
                    &candidate,
                    profile.as_ref(),
                    &self.embedding,
                    &summary,
                    self.config.estimation_bandwidth(),
                ) {
                    Ok(f) => {
                        let (score, is_event) = self.classifier.classify(&f.to_array())?;
                        Ok(ScoredCandidate {
                            candidate,
                            features: Some(f),
                            score,
                            is_event,
                        })
                    }
                    Err(Error::MissingHistory) => {
                        let is_event = self.config.cold_start_is_event;
                        Ok(ScoredCandidate {
                            candidate,
                            features: None,
                            score: if is_event { 1.0 } else { 0.0 },
                            is_event,
                        })
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    }

    /// Shifts once by the configured step, taking arrivals from a stream
    /// sorted by timestamp.
    pub fn step_stream(&mut self, stream: &[Arc<Tweet>]) -> Result<ShiftReport> {
        let end = self.window.end();
        let new_end = end + self.config.step_s;
        let lo = stream.partition_point(|t| t.timestamp < end);
        let hi = stream.partition_point(|t| t.timestamp < new_end);
        self.step(new_end, &stream[lo..hi])
    }

    /// Whether every tweet of `stream` has been delivered.
    pub fn exhausted(&self, stream: &[Arc<Tweet>]) -> bool {
        stream.last().is_none_or(|t| t.timestamp < self.window.end())
    }

    /// Steps until the stream is delivered or `max_shifts` shifts ran.
    pub fn replay(&mut self, stream: &[Arc<Tweet>], max_shifts: Option<usize>) -> Result<Vec<ShiftReport>> {
        let mut reports = Vec::new();
        while !self.exhausted(stream) && max_shifts.is_none_or(|m| reports.len() < m) {
            reports.push(self.step_stream(stream)?);
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Stopwords;

    fn tw(id: &str, ts: u64, lat: f64, lon: f64, text: &str) -> Arc<Tweet> {
        Arc::new(Tweet::new(id, id, ts, lat, lon, text, &Stopwords::empty()).unwrap())
    }

    fn cfg(mode: DetectionMode) -> EngineConfig {
        EngineConfig {
            window_s: 100,
            step_s: 10,
            mode,
            cold_start_is_event: true,
            embedding: EmbeddingParams {
                dimension: 8,
                ..EmbeddingParams::default()
            },
            ..EngineConfig::default()
        }
    }

    #[test]
    fn empty_stream_yields_nothing() {
        let mut e = Engine::new(cfg(DetectionMode::Incremental), LogRegModel::zeros(8), 0).unwrap();
        assert!(e.replay(&[], None).unwrap().is_empty());
        let r = e.step(10, &[]).unwrap();
        assert_eq!((r.candidates, r.events, e.events().len()), (0, 0, 0));
    }

    #[test]
    fn modes_agree_and_cold_start_applies() {
        let stream = vec![
            tw("a", 1, 41.0, -87.0, "fire smoke"),
            tw("b", 3, 41.001, -87.0, "fire truck"),
            tw("c", 5, 41.0, -87.001, "smoke fire truck"),
            tw("d", 12, 41.0005, -87.0, "fire smoke"),
            tw("e", 14, 45.0, -80.0, "quiet"),
        ];
        let mut inc = Engine::new(cfg(DetectionMode::Incremental), LogRegModel::zeros(8), 0).unwrap();
        let mut bat = Engine::new(cfg(DetectionMode::Batch), LogRegModel::zeros(8), 0).unwrap();
        for _ in 0..3 {
            inc.step_stream(&stream).unwrap();
            bat.step_stream(&stream).unwrap();
            assert_eq!(inc.assignments(), bat.assignments());
            assert_eq!(inc.last_candidates(), bat.last_candidates());
        }
        assert_eq!(inc.events(), bat.events());
        let ev = inc.events().get("ev-a").unwrap();
        assert_eq!(ev.record.member_ids, ["a", "b", "c"]);
        assert_eq!(ev.record.detected_at, 10);
        let last = &inc.last_candidates()[0];
        assert_eq!(last.candidate.member_ids(), ["a", "b", "c", "d"]);
        assert!(last.is_event && last.features.is_none());
        assert!(inc.exhausted(&stream));
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = EngineConfig::default();
        c.step_s = 0;
        assert!(Engine::new(c, LogRegModel::zeros(8), 0).is_err());
        let c = EngineConfig::default();
        assert!(matches!(
            Engine::new(c, LogRegModel::zeros(3), 0),
            Err(Error::FeatureLength { .. })
        ));
    }
}
