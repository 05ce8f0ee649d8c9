//! HTTP front end for live sessions.
//!
//! Commands go through `POST /session/{id}/cmd`; state comes back as
//! server-sent events on `GET /session/{id}/events`. The wire format is
//! described in `docs/protocol.md`.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use mzi_core::session::{CommandRequest, Event, Session, SessionConfig, PROTOCOL_VERSION};

pub const WRITER_HEADER: &str = "x-writer-token";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Wall-clock period of the session clocks; `None` leaves clocks to
    /// [`AppState::advance`].
    pub tick: Option<Duration>,
    /// Events kept per session for late subscribers.
    pub backlog: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { tick: Some(Duration::from_millis(20)), backlog: 4096 }
    }
}

struct Inner {
    session: Session,
    backlog: VecDeque<Event>,
}

struct Live {
    inner: Mutex<Inner>,
    writer_token: String,
    tx: broadcast::Sender<Event>,
    backlog: usize,
}

impl Live {
    /// Publishes while holding the session lock, so a subscriber that takes
    /// the backlog under the same lock sees every event exactly once.
    fn publish(&self, inner: &mut Inner, events: Vec<Event>) {
        for ev in events {
            if inner.backlog.len() == self.backlog {
                inner.backlog.pop_front();
            }
            inner.backlog.push_back(ev.clone());
            let _ = self.tx.send(ev);
        }
    }

    fn advance(&self, wall_seconds: f64) -> mzi_core::Result<()> {
        let mut inner = self.inner.lock().expect("session lock");
        let events = inner.session.advance(wall_seconds)?;
        self.publish(&mut inner, events);
        Ok(())
    }
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Live>>>,
    cfg: ServerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub protocol: u32,
    pub id: String,
    pub writer_token: String,
}

impl AppState {
    pub fn new(cfg: ServerConfig) -> Arc<Self> {
        Arc::new(Self { sessions: RwLock::new(HashMap::new()), cfg })
    }

    fn get(&self, id: &str) -> Option<Arc<Live>> {
        self.sessions.read().expect("session table").get(id).cloned()
    }

    pub fn create(&self, cfg: SessionConfig) -> mzi_core::Result<Created> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::new(id.clone(), cfg)?;
        let (tx, _) = broadcast::channel(self.cfg.backlog.max(16));
        let live = Arc::new(Live {
            inner: Mutex::new(Inner { session, backlog: VecDeque::new() }),
            writer_token: uuid::Uuid::new_v4().simple().to_string(),
            tx,
            backlog: self.cfg.backlog.max(1),
        });
        if let Some(period) = self.cfg.tick {
            spawn_ticker(Arc::downgrade(&live), period);
        }
        let created = Created { protocol: PROTOCOL_VERSION, id: id.clone(), writer_token: live.writer_token.clone() };
        self.sessions.write().expect("session table").insert(id, live);
        Ok(created)
    }

    /// Advances a session's clock by `wall_seconds` of real time.
    pub fn advance(&self, id: &str, wall_seconds: f64) -> Option<mzi_core::Result<()>> {
        self.get(id).map(|live| live.advance(wall_seconds))
    }
}

fn spawn_ticker(live: Weak<Live>, period: Duration) {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        let mut last = Instant::now();
        loop {
            interval.tick().await;
            let Some(live) = live.upgrade() else { break };
            let now = Instant::now();
            let dt = now.duration_since(last).as_secs_f64();
            last = now;
            if live.advance(dt).is_err() {
                break;
            }
        }
    });
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "protocol": PROTOCOL_VERSION, "error": message.into() }))).into_response()
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Response {
    let cfg: SessionConfig = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid session config: {e}")),
    };
    match app.create(cfg) {
        Ok(created) => (StatusCode::CREATED, Json(created)).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn command(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(live) = app.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"));
    };
    let token = headers.get(WRITER_HEADER).and_then(|v| v.to_str().ok());
    if token != Some(live.writer_token.as_str()) {
        return error(StatusCode::FORBIDDEN, "this client is not the session's writer");
    }
    let req: CommandRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid command: {e}")),
    };
    let outcome = {
        let mut inner = live.inner.lock().expect("session lock");
        let (outcome, events) = inner.session.submit(req);
        live.publish(&mut inner, events);
        outcome
    };
    let status = if outcome.accepted { StatusCode::OK } else { StatusCode::CONFLICT };
    let mut body = serde_json::to_value(&outcome).expect("outcome serializes");
    body["protocol"] = json!(PROTOCOL_VERSION);
    (status, Json(body)).into_response()
}

async fn session_log(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match app.get(&id) {
        Some(live) => Json(live.inner.lock().expect("session lock").session.export_log()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown session {id}")),
    }
}

async fn session_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(live) = app.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"));
    };
    let inner = live.inner.lock().expect("session lock");
    match inner.session.snapshot(true) {
        Ok(state) => Json(json!({
            "protocol": PROTOCOL_VERSION,
            "session": id,
            "clock": inner.session.clock(),
            "payload": state,
        }))
        .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    /// Only events with a larger sequence number are sent.
    #[serde(default)]
    after: u64,
}

fn to_sse(ev: &Event) -> SseEvent {
    SseEvent::default()
        .event(ev.kind.clone())
        .id(ev.seq.to_string())
        .data(serde_json::to_string(ev).expect("event serializes"))
}

fn terminal(id: &str, seq: u64, reason: &str) -> SseEvent {
    to_sse(&Event {
        protocol: PROTOCOL_VERSION,
        seq,
        session: id.to_string(),
        kind: "error".to_string(),
        clock: 0.0,
        payload: json!({ "reason": reason }),
    })
}

type EventStream = std::pin::Pin<Box<dyn Stream<Item = Result<SseEvent, std::convert::Infallible>> + Send>>;

async fn events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Response {
    let Some(live) = app.get(&id) else {
        let once: EventStream = Box::pin(stream::once(async move { Ok(terminal(&id, 0, "unknown session")) }));
        return Sse::new(once).into_response();
    };
    let (backlog, rx) = {
        let inner = live.inner.lock().expect("session lock");
        let backlog: Vec<Event> = inner.backlog.iter().filter(|e| e.seq > q.after).cloned().collect();
        (backlog, live.tx.subscribe())
    };
    let last = backlog.last().map_or(q.after, |e| e.seq);
    let head = stream::iter(backlog.into_iter().map(|e| Ok(to_sse(&e))));
    let tail = stream::unfold(Some((rx, last, id)), |state| async move {
        let (mut rx, mut last, id) = state?;
        loop {
            match rx.recv().await {
                Ok(ev) if ev.seq <= last => continue,
                Ok(ev) => {
                    last = ev.seq;
                    return Some((Ok(to_sse(&ev)), Some((rx, last, id))));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let reason = format!("subscriber fell behind after event {last}; reconnect with ?after={last}");
                    return Some((Ok(terminal(&id, last, &reason)), None));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let all: EventStream = Box::pin(head.chain(tail));
    Sse::new(all).keep_alive(KeepAlive::default()).into_response()
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/cmd", post(command))
        .route("/session/{id}/events", get(events))
        .route("/session/{id}/log", get(session_log))
        .route("/session/{id}/state", get(session_state))
        .with_state(app)
}

pub async fn serve(addr: SocketAddr, cfg: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(cfg))).await
}

/// Runs the server on its own runtime until it fails.
pub fn serve_blocking(addr: SocketAddr, cfg: ServerConfig) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(addr, cfg))
}
