//! HTTP and WebSocket front of the inference service.
//!
//! `GET /health`, `POST /infer?heatmap=0|1&session=<id>`, `GET /sessions/{id}`
//! and `GET /stream?heatmap=0|1&session=<id>` (WebSocket). Inference runs on
//! the blocking pool behind a semaphore.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{Notify, Semaphore};

use earnet::data::ClassCatalog;
use earnet::serve::{infer_frame, now_ms, read_log, validate_session_id, FramePrediction, InferOptions, LatestSlot, SessionLog};
use earnet::train::load_checkpoint;
use earnet::{Error as CoreError, Model};

use crate::cli::{GlobalOpts, ServeArgs};
use crate::config::FileConfig;

pub struct AppState {
    pub model: Model<f32>,
    pub catalog: ClassCatalog,
    pub defaults: InferOptions,
    pub log_dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<SessionLog>>>,
    workers: Semaphore,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(model: Model<f32>, catalog: ClassCatalog, defaults: InferOptions, log_dir: PathBuf, workers: usize) -> Result<Self> {
        anyhow::ensure!(catalog.len() == model.config.num_classes, "{} class names for {} outputs", catalog.len(), model.config.num_classes);
        std::fs::create_dir_all(&log_dir).with_context(|| format!("creating {}", log_dir.display()))?;
        Ok(Self {
            model,
            catalog,
            defaults,
            log_dir,
            sessions: Mutex::new(HashMap::new()),
            workers: Semaphore::new(workers.max(1)),
            next_session: AtomicU64::new(0),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<SessionLog>, CoreError> {
        let mut map = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(log) = map.get(id) {
            return Ok(log.clone());
        }
        let log = Arc::new(SessionLog::open(&self.log_dir, id)?);
        map.insert(id.to_string(), log.clone());
        Ok(log)
    }

    fn fresh_session_id(&self) -> String {
        format!("s{}-{}", now_ms(), self.next_session.fetch_add(1, Ordering::Relaxed))
    }

    /// Runs one inference on the blocking pool, then logs it when a
    /// session is given and the frame passed the sharpness gate.
    async fn predict(self: &Arc<Self>, bytes: Vec<u8>, heatmap: bool, session: Option<String>) -> Result<FramePrediction, ApiError> {
        if let Some(id) = &session {
            validate_session_id(id)?;
        }
        let _permit = self.workers.acquire().await.map_err(|_| ApiError::unavailable("service is shutting down"))?;
        let state = self.clone();
        let opts = InferOptions { heatmap, ..self.defaults };
        let mut pred = tokio::task::spawn_blocking(move || infer_frame(&state.model, &state.catalog, &bytes, &opts))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
        if let Some(id) = session {
            pred.session = Some(id.clone());
            if !pred.blurry {
                let log = self.session(&id)?;
                pred = tokio::task::spawn_blocking(move || log.append(&pred)).await.map_err(|e| ApiError::internal(e.to_string()))??;
            }
        }
        Ok(pred)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn internal(message: String) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, message }
    }

    fn unavailable(message: &str) -> Self {
        Self { status: StatusCode::SERVICE_UNAVAILABLE, message: message.into() }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::Decode { .. } | CoreError::Input(_) | CoreError::Shape(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct InferQuery {
    heatmap: Option<u8>,
    session: Option<String>,
}

impl InferQuery {
    fn heatmap(&self, default: bool) -> bool {
        self.heatmap.map_or(default, |h| h != 0)
    }
}

#[derive(Deserialize)]
struct JsonFrame {
    image: String,
    #[serde(default)]
    session: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/infer", post(infer))
        .route("/sessions/{id}", get(session_log))
        .route("/stream", get(stream))
        .with_state(state)
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "model": s.model.kind.name(),
        "classes": s.catalog.names(),
        "params": s.model.parameter_count(),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn infer(State(s): State<Arc<AppState>>, Query(q): Query<InferQuery>, headers: HeaderMap, body: Bytes) -> Result<Json<FramePrediction>, ApiError> {
    let is_json = headers
        .get(axum::http::header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let (bytes, session) = if is_json {
        let frame: JsonFrame = serde_json::from_slice(&body).map_err(|e| ApiError { status: StatusCode::BAD_REQUEST, message: format!("bad JSON body: {e}") })?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(frame.image.trim())
            .map_err(|e| ApiError { status: StatusCode::BAD_REQUEST, message: format!("bad base64 image: {e}") })?;
        (bytes, frame.session.or(q.session.clone()))
    } else {
        (body.to_vec(), q.session.clone())
    };
    let heatmap = q.heatmap(s.defaults.heatmap);
    Ok(Json(s.predict(bytes, heatmap, session).await?))
}

async fn session_log(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<FramePrediction>>, ApiError> {
    validate_session_id(&id)?;
    let path = s.log_dir.join(format!("{id}.jsonl"));
    if !path.exists() {
        return Err(ApiError { status: StatusCode::NOT_FOUND, message: format!("no session `{id}`") });
    }
    Ok(Json(tokio::task::spawn_blocking(move || read_log(&path)).await.map_err(|e| ApiError::internal(e.to_string()))??))
}

async fn stream(State(s): State<Arc<AppState>>, Query(q): Query<InferQuery>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    let session = match q.session.clone() {
        Some(id) => {
            validate_session_id(&id)?;
            id
        }
        None => s.fresh_session_id(),
    };
    let heatmap = q.heatmap(s.defaults.heatmap);
    Ok(ws.on_upgrade(move |socket| run_stream(s, socket, session, heatmap)))
}

/// The reader keeps only the newest unprocessed frame; the worker answers
/// each frame it picks up and reports drops as they accumulate.
async fn run_stream(state: Arc<AppState>, socket: WebSocket, session: String, heatmap: bool) {
    use futures_util::{SinkExt, StreamExt};

    let (mut tx, mut rx) = socket.split();
    let slot: Arc<LatestSlot<Vec<u8>>> = Arc::new(LatestSlot::new());
    let wake = Arc::new(Notify::new());
    let closed = Arc::new(std::sync::atomic::AtomicBool::new(false));

    let reader = {
        let (slot, wake, closed) = (slot.clone(), wake.clone(), closed.clone());
        tokio::spawn(async move {
            while let Some(Ok(msg)) = rx.next().await {
                match msg {
                    Message::Binary(b) => {
                        slot.put(b.to_vec());
                        wake.notify_one();
                    }
                    Message::Close(_) => break,
                    _ => {}
                }
            }
            closed.store(true, Ordering::SeqCst);
            wake.notify_one();
        })
    };

    let mut reported = 0;
    loop {
        let Some(frame) = slot.take() else {
            if closed.load(Ordering::SeqCst) {
                break;
            }
            wake.notified().await;
            continue;
        };
        let reply = match state.predict(frame, heatmap, Some(session.clone())).await {
            Ok(p) => serde_json::to_string(&p).expect("serialisable"),
            Err(e) => json!({ "error": e.message }).to_string(),
        };
        if tx.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
        let dropped = slot.dropped();
        if dropped != reported {
            reported = dropped;
            if tx.send(Message::Text(json!({ "dropped": dropped }).to_string().into())).await.is_err() {
                break;
            }
        }
    }
    reader.abort();
}

pub fn run(_g: &GlobalOpts, file: &FileConfig, a: ServeArgs) -> Result<()> {
    let (model, catalog, _) = load_checkpoint(&a.weights).with_context(|| format!("refusing to start: cannot load {}", a.weights.display()))?;
    let mut defaults = InferOptions { heatmap: a.heatmap, ..Default::default() };
    let section = file.serve.as_ref();
    if let Some(gate) = a.sharpness_gate.or(section.and_then(|s| s.sharpness_gate)) {
        defaults.sharpness_gate = gate;
    }
    if let Some(alpha) = section.and_then(|s| s.alpha) {
        defaults.alpha = alpha;
    }
    let state = Arc::new(AppState::new(model, catalog, defaults, a.log_dir.clone(), a.workers)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        log::info!("serving {} on http://{}", state.model.kind.name(), listener.local_addr()?);
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server error")
    })
}
