//! HTTP session service.
//!
//! Sessions live in memory and are optionally mirrored to a directory after
//! every mutation, using the same layout as [`Session::export`]. Each session
//! has a single writer; image and transcript reads share a read lock.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock as AsyncRwLock;

use retouch_core::agents::AgentError;
use retouch_core::orchestrator::{
    AgentKind, Agents, IterationRecord, Mode, Session, SessionConfig, SessionError, SessionTranscript,
};
use retouch_core::program::RetouchProgram;
use retouch_core::raster::{decode_image_bytes, encode_png, BitDepth, ImageBuffer};
use retouch_core::scoring::{DistributionProvider, StatsProvider};

const MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;

/// Builds the agents for a session's configured kind.
pub type AgentResolver = Arc<dyn Fn(AgentKind) -> Result<Agents, String> + Send + Sync>;

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    provider: Arc<dyn DistributionProvider>,
    agents: AgentResolver,
    persist: Option<PathBuf>,
}

struct SessionSlot {
    session: Arc<AsyncRwLock<Session>>,
    agents: Agents,
}

impl AppState {
    pub fn new(provider: Arc<dyn DistributionProvider>, agents: AgentResolver, persist: Option<PathBuf>) -> Self {
        AppState {
            inner: Arc::new(Inner { sessions: RwLock::new(HashMap::new()), provider, agents, persist }),
        }
    }

    /// Statistics-based scoring and rule agents only.
    pub fn offline(persist: Option<PathBuf>) -> Self {
        let agents: AgentResolver = Arc::new(|kind| match kind {
            AgentKind::Rule => Ok(Agents::rule()),
            AgentKind::Chat => Err("chat agents are not configured on this server".into()),
        });
        Self::new(Arc::new(StatsProvider), agents, persist)
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().unwrap().len()
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn persist(&self, id: &str, session: &Session) {
        if let Some(dir) = &self.inner.persist {
            if let Err(e) = session.export(dir.join(id), BitDepth::Sixteen) {
                log::warn!("persisting session {id} failed: {e}");
            }
        }
    }
}

/// JSON error body: `{"error": ..., "retryable": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retryable: bool,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), retryable: false }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let retryable = e.is_backend();
        let status = match &e {
            SessionError::WrongState { .. } => StatusCode::CONFLICT,
            _ if retryable => StatusCode::BAD_GATEWAY,
            SessionError::IndexOutOfRange { .. }
            | SessionError::InvalidInput(_)
            | SessionError::Image(_)
            | SessionError::Agent(AgentError::InvalidRequest(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string(), retryable }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::unprocessable(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "retryable": self.retryable }))).into_response()
    }
}

/// Image URLs of a session, grouped by role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrls {
    pub source: String,
    pub original: String,
    pub refs: Vec<String>,
    /// Source after iteration `t`.
    pub selections: Vec<String>,
    /// Candidates of iteration `t`, index 0 being that iteration's source.
    pub candidates: Vec<Vec<String>>,
    pub pending: Vec<String>,
}

/// Transcript plus image URLs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    #[serde(flatten)]
    pub transcript: SessionTranscript,
    pub images: ImageUrls,
}

fn image_url(id: &str, key: &str) -> String {
    format!("/sessions/{id}/images/{key}")
}

fn candidate_urls(id: &str, record: &IterationRecord) -> Vec<String> {
    (0..record.candidates.len()).map(|i| image_url(id, &format!("candidate-{}-{i}", record.t))).collect()
}

fn state_of(id: &str, session: &Session) -> SessionState {
    let history = session.history();
    SessionState {
        session_id: id.to_string(),
        transcript: session.transcript(),
        images: ImageUrls {
            source: image_url(id, "source"),
            original: image_url(id, "original"),
            refs: (0..session.refs().len()).map(|k| image_url(id, &format!("ref-{k}"))).collect(),
            selections: (0..history.len()).map(|t| image_url(id, &format!("selection-{t}"))).collect(),
            candidates: history.iter().map(|r| candidate_urls(id, r)).collect(),
            pending: session
                .pending_images()
                .map(|imgs| (0..imgs.len()).map(|i| image_url(id, &format!("pending-{i}"))).collect())
                .unwrap_or_default(),
        },
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

async fn healthz() -> &'static str {
    "ok"
}

fn parse_mode(text: &str) -> Result<Mode, ApiError> {
    match text.trim() {
        "reference" => Ok(Mode::Reference),
        "instruction" => Ok(Mode::Instruction),
        other => Err(ApiError::unprocessable(format!("unknown mode {other:?}"))),
    }
}

fn decode(name: &str, bytes: &[u8]) -> Result<ImageBuffer, ApiError> {
    decode_image_bytes(bytes)
        .map(|l| l.image)
        .map_err(|e| ApiError::unprocessable(format!("{name}: {e}")))
}

async fn create_session(State(app): State<AppState>, mut multipart: Multipart) -> Result<Response, ApiError> {
    let mut source = None;
    let mut refs = Vec::new();
    let mut mode = None;
    let mut config_text = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::unprocessable(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::unprocessable(e.body_text()))?;
        match name.as_str() {
            "source" => source = Some(decode("source", &bytes)?),
            "refs" | "refs[]" | "ref" => refs.push(decode(&name, &bytes)?),
            "mode" => mode = Some(parse_mode(&String::from_utf8_lossy(&bytes))?),
            "config" => config_text = Some(String::from_utf8_lossy(&bytes).into_owned()),
            other => log::debug!("ignoring multipart field {other:?}"),
        }
    }
    let source = source.ok_or_else(|| ApiError::unprocessable("missing source image"))?;
    let mut config: SessionConfig = match config_text {
        Some(text) => serde_json::from_str(&text).map_err(|e| ApiError::unprocessable(format!("config: {e}")))?,
        None => SessionConfig::default(),
    };
    if let Some(mode) = mode {
        config.mode = mode;
    }
    if config.mode == Mode::Instruction && !refs.is_empty() {
        return Err(ApiError::unprocessable("instruction sessions take no reference images"));
    }
    let agents = (app.inner.agents)(config.agent).map_err(ApiError::unprocessable)?;
    let scorer = config.score.scorer(app.inner.provider.clone());
    let session = blocking(move || match config.mode {
        Mode::Reference => Session::new_reference(source, refs, config, &scorer),
        Mode::Instruction => Session::new_instruction(source, config),
    })
    .await??;
    let id = uuid::Uuid::new_v4().simple().to_string();
    app.persist(&id, &session);
    let state = state_of(&id, &session);
    let slot = SessionSlot { session: Arc::new(AsyncRwLock::new(session)), agents };
    app.inner.sessions.write().unwrap().insert(id.clone(), Arc::new(slot));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "state": state }))).into_response())
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    let slot = app.slot(&id)?;
    let session = slot.session.read().await;
    Ok(Json(state_of(&id, &session)))
}

async fn step(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let slot = app.slot(&id)?;
    let mut session = slot.session.clone().write_owned().await;
    if session.config().mode != Mode::Reference {
        return Err(ApiError::new(StatusCode::CONFLICT, "automatic steps need a reference-mode session"));
    }
    let agents = slot.agents.clone();
    let app2 = app.clone();
    blocking(move || {
        let record = session.run_iteration(&agents)?.clone();
        app2.persist(&id, &session);
        Ok::<_, SessionError>(json!({
            "iteration_record": record,
            "candidate_urls": candidate_urls(&id, &record),
            "status": session.status(),
        }))
    })
    .await?
    .map(Json)
    .map_err(Into::into)
}

#[derive(Debug, Deserialize)]
struct InstructionBody {
    text: String,
}

async fn instruction(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<InstructionBody>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(body) = body?;
    let slot = app.slot(&id)?;
    let mut session = slot.session.clone().write_owned().await;
    if session.config().mode != Mode::Instruction {
        return Err(ApiError::new(StatusCode::CONFLICT, "instructions need an instruction-mode session"));
    }
    let agents = slot.agents.clone();
    let app2 = app.clone();
    blocking(move || {
        let pending = session.interactive_step(&body.text, &agents)?.clone();
        app2.persist(&id, &session);
        let candidates: Vec<_> = pending
            .record
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| json!({ "index": i, "image_url": image_url(&id, &format!("pending-{i}")), "program": c.program }))
            .collect();
        Ok::<_, SessionError>(json!({
            "candidates": candidates,
            "descriptions": pending.record.descriptions,
            "codegen_failures": pending.record.codegen_failures,
            "status": session.status(),
        }))
    })
    .await?
    .map(Json)
    .map_err(Into::into)
}

#[derive(Debug, Deserialize)]
struct SelectBody {
    index: usize,
}

async fn select(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SelectBody>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(body) = body?;
    let slot = app.slot(&id)?;
    let mut session = slot.session.write().await;
    session.user_select(body.index)?;
    app.persist(&id, &session);
    Ok(Json(json!({ "state": state_of(&id, &session) })))
}

enum ImageKey {
    Source,
    Original,
    Ref(usize),
    Selection(usize),
    Candidate(usize, usize),
    Pending(usize),
}

fn parse_key(key: &str) -> Option<ImageKey> {
    let key = key.strip_suffix(".png").unwrap_or(key);
    let num = |s: &str| s.parse::<usize>().ok();
    match key {
        "source" => return Some(ImageKey::Source),
        "original" => return Some(ImageKey::Original),
        _ => {}
    }
    if let Some(rest) = key.strip_prefix("candidate-") {
        let (t, i) = rest.split_once('-')?;
        return Some(ImageKey::Candidate(num(t)?, num(i)?));
    }
    let (kind, n) = key.rsplit_once('-')?;
    let n = num(n)?;
    match kind {
        "ref" => Some(ImageKey::Ref(n)),
        "selection" => Some(ImageKey::Selection(n)),
        "pending" => Some(ImageKey::Pending(n)),
        _ => None,
    }
}

async fn get_image(
    State(app): State<AppState>,
    Path((id, key)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let parsed = parse_key(&key).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no image {key}")))?;
    let session = slot.session.clone().read_owned().await;
    let missing = move || ApiError::new(StatusCode::NOT_FOUND, format!("no image {key}"));
    let png = blocking(move || {
        let img = match parsed {
            ImageKey::Source => Some(session.source().clone()),
            ImageKey::Original => Some(session.original().clone()),
            ImageKey::Ref(k) => session.refs().get(k).cloned(),
            ImageKey::Selection(t) => (t < session.history().len()).then(|| session.source_at(t + 1).cloned()).flatten(),
            ImageKey::Candidate(t, i) => session.candidate_image(t, i).ok(),
            ImageKey::Pending(i) => session.pending_images().and_then(|imgs| imgs.get(i).cloned()),
        };
        img.map(|img| encode_png(&img, BitDepth::Eight))
    })
    .await?
    .ok_or_else(missing)?
    .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn get_program(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let session = slot.session.read().await;
    let program: &RetouchProgram = session.composed_program();
    Ok(([(header::CONTENT_TYPE, "application/json")], program.to_json_pretty()).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/instruction", post(instruction))
        .route("/sessions/{id}/select", post(select))
        .route("/sessions/{id}/images/{key}", get(get_image))
        .route("/sessions/{id}/program", get(get_program))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Serves the API until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use retouch_core::orchestrator::SessionStatus;

    #[test]
    fn image_keys() {
        assert!(matches!(parse_key("source"), Some(ImageKey::Source)));
        assert!(matches!(parse_key("candidate-3-1.png"), Some(ImageKey::Candidate(3, 1))));
        assert!(matches!(parse_key("ref-4"), Some(ImageKey::Ref(4))));
        assert!(matches!(parse_key("pending-0"), Some(ImageKey::Pending(0))));
        assert!(matches!(parse_key("selection-2"), Some(ImageKey::Selection(2))));
        assert!(parse_key("candidate-x-1").is_none());
        assert!(parse_key("thumbnail-1").is_none());
    }

    #[test]
    fn error_statuses() {
        let conflict: ApiError =
            SessionError::WrongState { expected: "awaiting_user", actual: SessionStatus::Running }.into();
        assert_eq!(conflict.status, StatusCode::CONFLICT);
        let gateway: ApiError = SessionError::Backend("down".into()).into();
        assert_eq!((gateway.status, gateway.retryable), (StatusCode::BAD_GATEWAY, true));
        let failure: ApiError = SessionError::Agent(AgentError::Failure { attempts: 3, last_error: "x".into() }).into();
        assert_eq!((failure.status, failure.retryable), (StatusCode::BAD_GATEWAY, true));
        let bad: ApiError = SessionError::IndexOutOfRange { index: 9, len: 3 }.into();
        assert_eq!((bad.status, bad.retryable), (StatusCode::UNPROCESSABLE_ENTITY, false));
    }
}
