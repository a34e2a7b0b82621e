//! Versioned, checksummed state files for fast restart.
//!
//! A state directory holds one file per component. Each file starts with the
//! header line `radar-state <kind> v1 sha256:<hex>`, where the digest covers
//! everything after the header. Output is deterministic, so saving a loaded
//! state reproduces the original files byte for byte.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::LogRegModel;
use crate::embedding::EmbeddingModel;
use crate::engine::{Engine, EngineConfig, EngineParts};
use crate::error::{Error, Result};
use crate::ingest::{QueryWindow, Tweet};
use crate::keyword_graph::{KeywordGraph, VicinityCache};
use crate::store::EventStore;
use crate::summarizer::ActivityTimeline;

pub const STATE_VERSION: &str = "v1";
const MAGIC: &str = "radar-state";

pub const GRAPH_FILE: &str = "graph.txt";
pub const VICINITY_FILE: &str = "vicinity.json";
pub const TIMELINE_FILE: &str = "timeline.json";
pub const EMBEDDING_FILE: &str = "embedding.json";
pub const CLASSIFIER_FILE: &str = "classifier.txt";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const ENGINE_FILE: &str = "engine.json";

pub const STATE_FILES: [&str; 7] = [
    GRAPH_FILE,
    VICINITY_FILE,
    TIMELINE_FILE,
    EMBEDDING_FILE,
    CLASSIFIER_FILE,
    EVENTS_FILE,
    ENGINE_FILE,
];

fn kind_of(file: &str) -> &str {
    file.split('.').next().unwrap_or(file)
}

fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

/// Prefixes `body` with the header for `kind`.
pub fn encode(kind: &str, body: &str) -> String {
    format!("{MAGIC} {kind} {STATE_VERSION} sha256:{}\n{body}", digest(body))
}

/// Checks the header of a `kind` file and returns its body.
pub fn decode<'a>(kind: &str, text: &'a str) -> Result<&'a str> {
    let corrupt = |why: &str| Error::Corrupt(kind.to_string(), why.to_string());
    let (header, body) = text.split_once('\n').ok_or_else(|| corrupt("missing header"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let [magic, found_kind, version, sum] = fields.as_slice() else {
        return Err(corrupt("malformed header"));
    };
    if *magic != MAGIC || *found_kind != kind {
        return Err(corrupt("header names another file kind"));
    }
    if *version != STATE_VERSION {
        return Err(Error::VersionMismatch {
            file: kind.to_string(),
            found: version.to_string(),
            expected: STATE_VERSION.to_string(),
        });
    }
    let sum = sum.strip_prefix("sha256:").ok_or_else(|| corrupt("malformed checksum"))?;
    if sum != digest(body) {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(body)
}

#[derive(Serialize, Deserialize)]
struct EngineFile {
    config: EngineConfig,
    window_end: u64,
    window_length: u64,
    shifts: u64,
    tweets: Vec<Arc<Tweet>>,
}

/// Renders every state file as `(file name, contents)`.
pub fn render_state(engine: &Engine) -> Result<Vec<(&'static str, String)>> {
    let parts = engine.to_parts();
    let mut events = Vec::new();
    parts.events.write_log(&mut events)?;
    let events = String::from_utf8(events).expect("serde_json writes UTF-8");
    let engine_file = EngineFile {
        config: parts.config,
        window_end: parts.window.end(),
        window_length: parts.window.length(),
        shifts: parts.shifts,
        tweets: parts.window.tweets().cloned().collect(),
    };
    let bodies = [
        (GRAPH_FILE, parts.graph.to_edge_list()),
        (VICINITY_FILE, serde_json::to_string(&parts.vicinities)?),
        (TIMELINE_FILE, serde_json::to_string(&parts.timeline)?),
        (EMBEDDING_FILE, parts.embedding.to_json()),
        (CLASSIFIER_FILE, parts.classifier.to_text()),
        (EVENTS_FILE, events),
        (ENGINE_FILE, serde_json::to_string(&engine_file)?),
    ];
    Ok(bodies
        .into_iter()
        .map(|(file, body)| (file, encode(kind_of(file), &body)))
        .collect())
}

/// Writes the engine state into `dir`, creating it if needed. Each file is
/// written to a temporary name first and then renamed into place.
pub fn save_state(engine: &Engine, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (file, text) in render_state(engine)? {
        let tmp = dir.join(format!(".{file}.tmp"));
        fs::write(&tmp, text)?;
        fs::rename(&tmp, dir.join(file))?;
    }
    Ok(())
}

fn read(dir: &Path, file: &str) -> Result<String> {
    let text = fs::read_to_string(dir.join(file))?;
    decode(kind_of(file), &text).map(str::to_owned)
}

fn json<T: for<'de> Deserialize<'de>>(file: &str, body: &str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| Error::Corrupt(kind_of(file).to_string(), e.to_string()))
}

/// Reads only the event store from a state directory.
pub fn load_events(dir: &Path) -> Result<EventStore> {
    EventStore::read_log(read(dir, EVENTS_FILE)?.as_bytes())
}

/// Rebuilds an engine from a directory written by [`save_state`].
pub fn load_state(dir: &Path) -> Result<Engine> {
    let graph = KeywordGraph::from_edge_list(&read(dir, GRAPH_FILE)?)?;
    let vicinities: VicinityCache = json(VICINITY_FILE, &read(dir, VICINITY_FILE)?)?;
    let timeline: ActivityTimeline = json(TIMELINE_FILE, &read(dir, TIMELINE_FILE)?)?;
    let embedding = EmbeddingModel::from_json(&read(dir, EMBEDDING_FILE)?)?;
    let classifier = LogRegModel::from_text(&read(dir, CLASSIFIER_FILE)?)?;
    let events = EventStore::read_log(read(dir, EVENTS_FILE)?.as_bytes())?;
    let engine_file: EngineFile = json(ENGINE_FILE, &read(dir, ENGINE_FILE)?)?;
    let window = QueryWindow::from_parts(engine_file.window_end, engine_file.window_length, engine_file.tweets)?;
    Engine::from_parts(EngineParts {
        config: engine_file.config,
        graph,
        vicinities,
        embedding,
        timeline,
        classifier,
        window,
        events,
        shifts: engine_file.shifts,
    })
}
