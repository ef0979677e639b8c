//! HTTP service for live assessment sessions.
//!
//! Participants fetch the current task and post construction events; the
//! assessor creates sessions, advances or stops them, reads results and
//! follows a live similarity stream. Every accepted event is on disk before
//! it is acknowledged, and sessions are reloaded on startup.

pub mod error;
pub mod session;
pub mod store;

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use cogcubes_core::formats::{load_library, MANIFEST_FILE};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, Mutex, RwLock};

pub use error::ServiceError;
pub use session::{EventAck, EventRequest, LiveSession, ResultsView, StreamMessage, TaskView, TransitionView};

pub const ASSESSOR_TOKEN_HEADER: &str = "x-assessor-token";

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub sessions_dir: PathBuf,
    /// Library used when a request names none. Named libraries are looked up
    /// next to it.
    pub library: Option<PathBuf>,
    /// When set, assessor endpoints require it in `x-assessor-token`.
    pub assessor_token: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub participant_code: String,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub library: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionHandle {
    pub session_id: String,
    pub participant_code: String,
    pub created_at: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl AppState {
    /// Opens the sessions directory and reloads every session found in it.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let dir = &config.sessions_dir;
        std::fs::create_dir_all(dir).map_err(|source| cogcubes_core::FormatError::Io { path: dir.clone(), source })?;
        let mut sessions = HashMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|source| cogcubes_core::FormatError::Io { path: dir.clone(), source })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        entries.sort();
        let now = now_ms();
        for path in entries {
            let live = LiveSession::restore(path, now)?;
            sessions.insert(live.session_id().to_owned(), Arc::new(Mutex::new(live)));
        }
        Ok(AppState { inner: Arc::new(Inner { config, sessions: RwLock::new(sessions) }) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub async fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().await.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn session(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ServiceError> {
        self.inner.sessions.read().await.get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    fn library_path(&self, name: Option<&str>) -> Result<PathBuf, ServiceError> {
        let default = self.inner.config.library.as_deref();
        match name {
            None => default.map(Path::to_path_buf).ok_or_else(|| ServiceError::InvalidLibrary("no task library configured".into())),
            Some(name) => {
                if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                    return Err(ServiceError::InvalidLibrary(format!("bad library name `{name}`")));
                }
                let dir = default.and_then(Path::parent).unwrap_or(Path::new("."));
                let file = if name.ends_with(".json") { name.to_owned() } else { format!("{name}.json") };
                Ok(dir.join(file))
            }
        }
    }

    pub async fn create_session(&self, req: CreateSession) -> Result<SessionHandle, ServiceError> {
        if req.participant_code.trim().is_empty() {
            return Err(ServiceError::BadRequest("participant_code is empty".into()));
        }
        let path = self.library_path(req.library.as_deref())?;
        let tasks = load_library(&path).map_err(|e| ServiceError::InvalidLibrary(format!("{}: {e}", path.display())))?;
        let mut sessions = self.inner.sessions.write().await;
        let session_id = loop {
            let id = format!("{:016x}{:016x}", rand::random::<u64>(), rand::random::<u64>());
            if !sessions.contains_key(&id) && !self.inner.config.sessions_dir.join(&id).exists() {
                break id;
            }
        };
        let now = now_ms();
        let dir = self.inner.config.sessions_dir.join(&session_id);
        let live = LiveSession::create(dir, session_id.clone(), req.participant_code.clone(), req.group, tasks, now)?;
        sessions.insert(session_id.clone(), Arc::new(Mutex::new(live)));
        Ok(SessionHandle { session_id, participant_code: req.participant_code, created_at: now })
    }

    fn check_assessor(&self, headers: &HeaderMap) -> Result<(), ServiceError> {
        match &self.inner.config.assessor_token {
            None => Ok(()),
            Some(token) => match headers.get(ASSESSOR_TOKEN_HEADER).and_then(|v| v.to_str().ok()) {
                Some(given) if given == token => Ok(()),
                _ => Err(ServiceError::Unauthorized),
            },
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/task", get(get_task))
        .route("/sessions/{id}/events", post(post_event))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/abort", post(abort))
        .route("/sessions/{id}/results", get(results))
        .route("/sessions/{id}/stream", get(assessor_stream))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    state.check_assessor(&headers)?;
    let req: CreateSession = parse_body(&body)?;
    Ok((StatusCode::CREATED, Json(state.create_session(req).await?)))
}

async fn get_task(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<TaskView>, ServiceError> {
    let session = state.session(&id).await?;
    let view = session.lock().await.task_view();
    Ok(Json(view))
}

async fn post_event(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<EventAck>, ServiceError> {
    let session = state.session(&id).await?;
    let req: EventRequest = parse_body(&body)?;
    let mut live = session.lock().await;
    Ok(Json(live.post_event(&req, now_ms())?))
}

async fn advance(State(state): State<AppState>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Result<Json<TransitionView>, ServiceError> {
    state.check_assessor(&headers)?;
    let session = state.session(&id).await?;
    let mut live = session.lock().await;
    Ok(Json(live.advance(now_ms())?))
}

async fn abort(State(state): State<AppState>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Result<Json<TransitionView>, ServiceError> {
    state.check_assessor(&headers)?;
    let session = state.session(&id).await?;
    let mut live = session.lock().await;
    Ok(Json(live.abort()?))
}

async fn results(State(state): State<AppState>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Result<Json<ResultsView>, ServiceError> {
    state.check_assessor(&headers)?;
    let session = state.session(&id).await?;
    let view = session.lock().await.results();
    Ok(Json(view))
}

struct Cursor {
    backlog: VecDeque<StreamMessage>,
    rx: broadcast::Receiver<StreamMessage>,
    done: bool,
}

async fn assessor_stream(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    state.check_assessor(&headers)?;
    let session = state.session(&id).await?;
    let (backlog, rx) = session.lock().await.subscribe();
    let cursor = Cursor { backlog: backlog.into(), rx, done: false };
    let events = stream::unfold(cursor, |mut c| async move {
        if c.done {
            return None;
        }
        let msg = match c.backlog.pop_front() {
            Some(m) => m,
            None => c.rx.recv().await.ok()?,
        };
        c.done = matches!(msg, StreamMessage::End { .. });
        let data = serde_json::to_string(&msg).expect("stream message serializes");
        Some((Ok(Event::default().event(msg.name()).data(data)), c))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
