//! HTTP JSON API and server-sent event stream over [`ssomvr::session::Session`].
//!
//! Mutations on one session are serialized by a per-session writer lock and
//! applied to a private copy on a blocking worker; the copy is published only
//! when the whole operation succeeds. Readers always see the last published
//! snapshot, so they never wait on training or rendering.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::Engine;
use futures_util::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, Mutex};

use ssomvr::pipeline::TrainConfig;
use ssomvr::session::{ErrorKind, Session, SessionError, SessionEvent, View};
use ssomvr::volume::{load_raw, load_raw_file, make_phantom, PhantomKind, VolumeMeta};
use ssomvr::{Camera, ChannelWeights, RenderSettings, TfConfig};

/// `{code, message}` with the matching HTTP status.
#[derive(Debug)]
pub struct ApiError(SessionError);

impl ApiError {
    fn new(kind: ErrorKind, code: &'static str, message: impl Into<String>) -> Self {
        Self(SessionError::new(kind, code, message))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

impl From<ssomvr::Error> for ApiError {
    fn from(e: ssomvr::Error) -> Self {
        Self(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.kind.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "code": self.0.code, "message": self.0.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct SessionSlot {
    current: RwLock<Arc<Session>>,
    writer: Mutex<()>,
    events: broadcast::Sender<Arc<SessionEvent>>,
}

impl SessionSlot {
    fn snapshot(&self) -> Arc<Session> {
        self.current.read().expect("session lock poisoned").clone()
    }
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<u64, Arc<SessionSlot>>>,
    next_id: AtomicU64,
    tf: TfConfig,
}

impl AppState {
    fn slot(&self, id: u64) -> ApiResult<Arc<SessionSlot>> {
        self.sessions
            .read()
            .expect("registry lock poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorKind::NotFound, "UnknownSession", format!("no session {id}")))
    }
}

/// Runs `op` on a copy of the session and publishes it (plus any new events)
/// only if `op` succeeds.
async fn mutate<T, F>(slot: Arc<SessionSlot>, op: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
{
    let _writer = slot.writer.lock().await;
    let base = slot.snapshot();
    let before = base.revision();
    let (next, out) = tokio::task::spawn_blocking(move || {
        let mut working = (*base).clone();
        op(&mut working).map(|out| (working, out))
    })
    .await
    .map_err(|e| ApiError::new(ErrorKind::Internal, "WorkerFailure", e.to_string()))??;
    let fresh = next.events_since(before);
    *slot.current.write().expect("session lock poisoned") = Arc::new(next);
    for e in fresh {
        // No subscribers is fine; the log keeps every event.
        let _ = slot.events.send(e);
    }
    Ok(out)
}

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(ErrorKind::BadRequest, "MalformedRequest", e.to_string()))
}

pub fn router() -> Router {
    router_with(AppState::default())
}

pub fn router_with(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(session_status))
        .route("/session/{id}/volume", post(load_volume))
        .route("/session/{id}/train", post(train))
        .route("/session/{id}/lattice", get(lattice))
        .route("/session/{id}/groups", post(define_group).get(list_groups))
        .route("/session/{id}/groups/{gid}", delete(delete_group))
        .route("/session/{id}/render", post(render))
        .route("/session/{id}/reset", post(reset))
        .route("/session/{id}/events", get(events))
        .with_state(Arc::new(state))
}

type AppRef = State<Arc<AppState>>;

async fn create_session(State(app): AppRef) -> impl IntoResponse {
    let id = app.next_id.fetch_add(1, Ordering::Relaxed) + 1;
    let (events, _) = broadcast::channel(64);
    let slot = SessionSlot {
        current: RwLock::new(Arc::new(Session::new(app.tf.clone()))),
        writer: Mutex::new(()),
        events,
    };
    app.sessions
        .write()
        .expect("registry lock poisoned")
        .insert(id, Arc::new(slot));
    (StatusCode::CREATED, Json(json!({ "id": id })))
}

async fn session_status(State(app): AppRef, Path(id): Path<u64>) -> ApiResult<Json<serde_json::Value>> {
    let s = app.slot(id)?.snapshot();
    Ok(Json(json!({ "id": id, "phase": s.phase(), "revision": s.revision() })))
}

/// Where the voxels come from. Exactly one source must be given.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeRequest {
    /// Sidecar fields inline: `{"dims":..,"spacing":..,"bits":..,"byte_order":..}`.
    pub meta: Option<serde_json::Value>,
    /// Server-side RAW file.
    pub path: Option<PathBuf>,
    /// Server-side sidecar, used with `path` when `meta` is absent.
    pub meta_path: Option<PathBuf>,
    /// RAW bytes inline.
    pub data_base64: Option<String>,
    pub phantom: Option<PhantomRequest>,
    pub feature_weights: Option<ChannelWeights>,
}

#[derive(Debug, Deserialize)]
pub struct PhantomRequest {
    #[serde(flatten)]
    pub kind: PhantomKind,
    pub dims: [usize; 3],
}

fn bad(code: &'static str, message: impl Into<String>) -> ApiError {
    ApiError::new(ErrorKind::BadRequest, code, message)
}

fn load_requested_volume(req: VolumeRequest) -> ApiResult<ssomvr::Volume> {
    let meta = match req.meta {
        Some(v) => {
            let meta: VolumeMeta = serde_json::from_value(v).map_err(|e| bad("InvalidMeta", e.to_string()))?;
            meta.validate().map_err(ssomvr::Error::from)?;
            Some(meta)
        }
        None => None,
    };
    match (req.phantom, req.path, req.data_base64) {
        (Some(p), None, None) => Ok(make_phantom(&p.kind, p.dims).map_err(ssomvr::Error::from)?.volume),
        (None, Some(path), None) => match (meta, req.meta_path) {
            (Some(mut meta), None) => {
                let bytes = std::fs::read(&path).map_err(|e| {
                    ApiError::new(ErrorKind::Unprocessable, "Unreadable", format!("{}: {e}", path.display()))
                })?;
                meta.source_path = path.display().to_string();
                Ok(load_raw(meta, &bytes).map_err(ssomvr::Error::from)?)
            }
            (None, Some(meta_path)) => Ok(load_raw_file(&path, &meta_path).map_err(ssomvr::Error::from)?),
            (None, None) => Ok(load_raw_file(&path, &path.with_extension("json")).map_err(ssomvr::Error::from)?),
            (Some(_), Some(_)) => Err(bad("MalformedRequest", "give either meta or meta_path, not both")),
        },
        (None, None, Some(data)) => {
            let meta = meta.ok_or_else(|| bad("InvalidMeta", "inline data requires meta"))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(data)
                .map_err(|e| bad("MalformedRequest", e.to_string()))?;
            Ok(load_raw(meta, &bytes).map_err(ssomvr::Error::from)?)
        }
        _ => Err(bad(
            "MalformedRequest",
            "exactly one of phantom, path or data_base64 is required",
        )),
    }
}

async fn load_volume(State(app): AppRef, Path(id): Path<u64>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let slot = app.slot(id)?;
    let req: VolumeRequest = parse_body(&body)?;
    if slot.snapshot().phase() != ssomvr::session::Phase::Empty {
        return Err(ApiError::new(
            ErrorKind::Conflict,
            "Conflict",
            "a volume is already loaded; reset the session first",
        ));
    }
    let weights = req.feature_weights.unwrap_or_default();
    let summary = mutate(slot, move |s| {
        let volume = load_requested_volume(req).map_err(|e| e.0)?;
        s.load_volume(volume, weights)
    })
    .await?;
    Ok(Json(json!(summary)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TrainRequest {
    #[serde(flatten)]
    config: TrainConfig,
    view: Option<View>,
}

async fn train(State(app): AppRef, Path(id): Path<u64>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let slot = app.slot(id)?;
    let req: TrainRequest = parse_body(&body)?;
    let payload = mutate(slot, move |s| {
        if let Some(view) = req.view {
            s.set_view(view)?;
        }
        s.train(&req.config)
    })
    .await?;
    Ok(Json(json!(payload)))
}

async fn lattice(State(app): AppRef, Path(id): Path<u64>) -> ApiResult<Json<serde_json::Value>> {
    let s = app.slot(id)?.snapshot();
    Ok(Json(json!(s.lattice()?)))
}

async fn list_groups(State(app): AppRef, Path(id): Path<u64>) -> ApiResult<Json<serde_json::Value>> {
    let s = app.slot(id)?.snapshot();
    Ok(Json(json!({ "revision": s.revision(), "groups": s.groups() })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct GroupRequest {
    node_ids: Vec<u32>,
    camera: Option<Camera>,
    settings: Option<RenderSettings>,
}

async fn define_group(State(app): AppRef, Path(id): Path<u64>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let slot = app.slot(id)?;
    let req: GroupRequest = parse_body(&body)?;
    let out = mutate(slot, move |s| {
        if req.camera.is_some() || req.settings.is_some() {
            let mut view = s.view().clone();
            if req.camera.is_some() {
                view.camera = req.camera;
            }
            if let Some(settings) = req.settings {
                view.settings = settings;
            }
            s.set_view(view)?;
        }
        s.define_group(&req.node_ids)
    })
    .await?;
    Ok(Json(json!(out)))
}

async fn delete_group(State(app): AppRef, Path((id, gid)): Path<(u64, u32)>) -> ApiResult<Json<serde_json::Value>> {
    let slot = app.slot(id)?;
    let out = mutate(slot, move |s| s.delete_group(gid)).await?;
    Ok(Json(json!(out)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RenderRequest {
    camera: Option<Camera>,
    settings: Option<RenderSettings>,
}

async fn render(State(app): AppRef, Path(id): Path<u64>, body: Bytes) -> ApiResult<Response> {
    let s = app.slot(id)?.snapshot();
    let req: RenderRequest = parse_body(&body)?;
    let png = tokio::task::spawn_blocking(move || s.render(req.camera.as_ref(), req.settings.as_ref()))
        .await
        .map_err(|e| ApiError::new(ErrorKind::Internal, "WorkerFailure", e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn reset(State(app): AppRef, Path(id): Path<u64>) -> ApiResult<Json<serde_json::Value>> {
    let slot = app.slot(id)?;
    let (phase, revision) = mutate(slot, |s| {
        s.reset();
        Ok((s.phase(), s.revision()))
    })
    .await?;
    Ok(Json(json!({ "phase": phase, "revision": revision })))
}

/// Wire form of one pushed event.
#[derive(Debug, Serialize, Deserialize)]
pub struct EventMessage {
    pub revision: u64,
    pub event_type: String,
    pub payload: serde_json::Value,
}

fn to_message(e: &SessionEvent) -> EventMessage {
    let mut payload = e.payload.clone();
    if let (Some(png), Some(obj)) = (&e.png, payload.as_object_mut()) {
        obj.insert(
            "png_base64".into(),
            base64::engine::general_purpose::STANDARD.encode(png.as_slice()).into(),
        );
    }
    let event_type = serde_json::to_value(e.event_type)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    EventMessage {
        revision: e.revision,
        event_type,
        payload,
    }
}

fn to_sse(e: &SessionEvent) -> Event {
    let msg = to_message(e);
    Event::default()
        .id(msg.revision.to_string())
        .event(msg.event_type.clone())
        .data(serde_json::to_string(&msg).expect("event serializes"))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct EventsQuery {
    after: Option<u64>,
}

struct EventCursor {
    slot: Arc<SessionSlot>,
    rx: broadcast::Receiver<Arc<SessionEvent>>,
    backlog: VecDeque<Arc<SessionEvent>>,
    last: u64,
}

/// Replays the log after `after` (or `Last-Event-ID`) and then follows live
/// pushes; revisions are strictly increasing and never skipped.
async fn events(
    State(app): AppRef,
    Path(id): Path<u64>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let slot = app.slot(id)?;
    let after = q.after.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
    });
    // Subscribe before reading the log so nothing falls between the two.
    let rx = slot.events.subscribe();
    let backlog: VecDeque<_> = slot.snapshot().events_since(after.unwrap_or(0)).into();
    let cursor = EventCursor {
        slot,
        rx,
        backlog,
        last: after.unwrap_or(0),
    };
    let stream = futures_util::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(e) = c.backlog.pop_front() {
                if e.revision <= c.last {
                    continue;
                }
                c.last = e.revision;
                return Some((Ok(to_sse(&e)), c));
            }
            match c.rx.recv().await {
                Ok(e) => c.backlog.push_back(e),
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    c.backlog = c.slot.snapshot().events_since(c.last).into();
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
