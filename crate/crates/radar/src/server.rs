//! Read-only HTTP API over the latest published detection state.
//!
//! The detection loop owns the engine. After every shift it publishes an
//! immutable [`Published`] value; handlers clone the current `Arc` under a
//! read lock and never touch the engine.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::services::ServeDir;

use radar_core::engine::{Engine, EngineStatus};
use radar_core::ingest::Tweet;
use radar_core::store::{Area, EventQuery, EventRecord, EventStore};

/// One consistent view of the engine, taken between shifts.
#[derive(Debug, Clone)]
pub struct Published {
    pub status: EngineStatus,
    pub events: EventStore,
}

impl Published {
    pub fn of(engine: &Engine) -> Self {
        Self {
            status: engine.status(),
            events: engine.events().clone(),
        }
    }
}

pub type Shared = Arc<RwLock<Arc<Published>>>;

pub fn shared(engine: &Engine) -> Shared {
    Arc::new(RwLock::new(Arc::new(Published::of(engine))))
}

/// Swaps in a fresh view; readers holding the old one keep it.
pub fn publish(shared: &Shared, engine: &Engine) {
    let next = Arc::new(Published::of(engine));
    *shared.write().unwrap_or_else(|e| e.into_inner()) = next;
}

fn current(shared: &Shared) -> Arc<Published> {
    Arc::clone(&shared.read().unwrap_or_else(|e| e.into_inner()))
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ApiError { error: message.into() })).into_response()
}

/// Builds an [`EventQuery`] from URL parameters. `from` defaults to 0 and
/// `to` to the end of time; `lat`, `lon` and `radius_m` go together.
pub fn parse_query(params: &HashMap<String, String>) -> Result<EventQuery, String> {
    const KNOWN: [&str; 6] = ["from", "to", "keyword", "lat", "lon", "radius_m"];
    if let Some(k) = params.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(format!("unknown parameter `{k}`"));
    }
    fn num<T: std::str::FromStr>(params: &HashMap<String, String>, key: &str) -> Result<Option<T>, String> {
        params
            .get(key)
            .map(|v| v.trim().parse::<T>().map_err(|_| format!("`{key}` is not a valid number: {v:?}")))
            .transpose()
    }
    let from = num::<u64>(params, "from")?.unwrap_or(0);
    let to = num::<u64>(params, "to")?.unwrap_or(u64::MAX);
    let lat = num::<f64>(params, "lat")?;
    let lon = num::<f64>(params, "lon")?;
    let radius = num::<f64>(params, "radius_m")?;
    let area = match (lat, lon, radius) {
        (None, None, None) => None,
        (Some(lat), Some(lon), Some(radius_m)) => Some(Area { lat, lon, radius_m }),
        _ => return Err("`lat`, `lon` and `radius_m` must be given together".into()),
    };
    let query = EventQuery {
        from,
        to,
        keyword: params.get("keyword").map(|k| k.trim().to_string()),
        area,
    };
    query.validate().map_err(|e| e.to_string())?;
    Ok(query)
}

async fn list_events(State(shared): State<Shared>, Query(params): Query<HashMap<String, String>>) -> Response {
    let query = match parse_query(&params) {
        Ok(q) => q,
        Err(msg) => return error(StatusCode::BAD_REQUEST, msg),
    };
    match current(&shared).events.query(&query) {
        Ok(events) => Json(events).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

#[derive(Serialize)]
struct EventDetail<'a> {
    #[serde(flatten)]
    record: &'a EventRecord,
    members: &'a [Arc<Tweet>],
}

async fn get_event(State(shared): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    let view = current(&shared);
    match view.events.get(&id) {
        Some(e) => Json(EventDetail {
            record: &e.record,
            members: &e.members,
        })
        .into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no event `{id}`")),
    }
}

async fn status(State(shared): State<Shared>) -> Json<EngineStatus> {
    Json(current(&shared).status.clone())
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/events", get(list_events))
        .route("/events/{id}", get(get_event))
        .route("/status", get(status))
        .with_state(shared)
}

/// [`router`] plus static files from `dir` for every other path.
pub fn router_with_static(shared: Shared, dir: &Path) -> Router {
    router(shared).fallback_service(ServeDir::new(dir))
}
