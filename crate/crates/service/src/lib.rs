//! JSON-over-HTTP access to interactive picking sessions.
//!
//! ```text
//! POST /sessions                      create a session for a generated or supplied scene
//! GET  /sessions/{id}                 session resource
//! GET  /sessions/{id}/image           rendered scene (PNG)
//! POST /sessions/{id}/command         ground a command, pick a question
//! POST /sessions/{id}/answer          append an answer (or let the oracle answer), re-estimate
//! GET  /sessions/{id}/heatmaps/{name} heatmap as JSON rows or the binary format
//! GET  /sessions/{id}/transcript      session transcript
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use it2p::blockworld::{generate_scene, Block, Scene, SceneConfig};
use it2p::dialogue::{OracleVerdict, SessionConfig, SessionState, Transcript, HEATMAP_STAGES};
use it2p::inquiry::QuestionCatalog;
use it2p::language::{Answer, Command, Vocab};
use it2p::{Error as CoreError, QgnModel, Session, T2PModel};

pub const ENV_T2P: &str = "IT2P_T2P_CKPT";
pub const ENV_QGN: &str = "IT2P_QGN_CKPT";
pub const ENV_VOCAB: &str = "IT2P_VOCAB";
pub const ENV_PORT: &str = "IT2P_PORT";
pub const DEFAULT_PORT: u16 = 8080;

/// Questions listed alongside the chosen one.
const RANKING_LEN: usize = 5;

/// Trained networks shared read-only by all sessions.
pub struct Models {
    pub t2p: T2PModel,
    pub qgn: QgnModel,
    pub vocab: Vocab,
    pub catalog: QuestionCatalog,
}

impl Models {
    pub fn load(t2p: &Path, qgn: &Path, vocab: &Path) -> it2p::Result<Self> {
        let vocab = Vocab::load(vocab)?;
        let t2p = T2PModel::load(t2p, &vocab)?;
        let qgn = QgnModel::load(qgn, &vocab)?;
        it2p::dialogue::check_models(&t2p, &qgn, &vocab)?;
        Ok(Self { t2p, qgn, vocab, catalog: QuestionCatalog::standard() })
    }

    /// Loads the checkpoints named by the environment variables.
    pub fn from_env() -> it2p::Result<Self> {
        let var = |k: &str| {
            std::env::var_os(k)
                .map(PathBuf::from)
                .ok_or_else(|| CoreError::Config(format!("environment variable {k} is not set")))
        };
        Self::load(&var(ENV_T2P)?, &var(ENV_QGN)?, &var(ENV_VOCAB)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Defaults for new sessions; `seed` is replaced per session.
    pub session: SessionConfig,
    /// Finished sessions are written here as `{id}.json` plus heatmaps.
    pub transcript_dir: Option<PathBuf>,
}

struct Entry {
    session: Session,
    debug: bool,
}

struct Inner {
    models: Option<Arc<Models>>,
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// `models` may be absent, in which case session creation answers 503.
    pub fn new(models: Option<Models>, config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            models: models.map(Arc::new),
            config,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }))
    }

    fn models(&self) -> Result<Arc<Models>, ApiError> {
        self.0.models.clone().ok_or(ApiError::Unavailable)
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        self.0.sessions.read().expect("session table").get(id).cloned().ok_or(ApiError::NotFound)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no such resource")]
    NotFound,
    #[error("models are not loaded")]
    Unavailable,
    #[error("another request on this session is in progress")]
    Busy,
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound => StatusCode::NOT_FOUND,
            ApiError::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Busy => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Core(e) => match e {
                CoreError::State { .. } => StatusCode::CONFLICT,
                CoreError::EmptyCommand | CoreError::BadToken { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                CoreError::Config(_) | CoreError::Shape(_) | CoreError::NotFound(_) | CoreError::ContractViolation(_) => {
                    StatusCode::BAD_REQUEST
                }
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

/// Runs `f` on the session off the async runtime. A session that is already
/// being worked on answers 409.
async fn with_session<R: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Entry, &Models) -> ApiResult<R> + Send + 'static,
) -> ApiResult<R> {
    let entry = state.entry(id)?;
    let models = state.models()?;
    tokio::task::spawn_blocking(move || {
        let mut guard = match entry.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(ApiError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        f(&mut guard, &models)
    })
    .await
    .map_err(|e| ApiError::BadRequest(format!("request aborted: {e}")))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/image", get(get_image))
        .route("/sessions/{id}/command", post(post_command))
        .route("/sessions/{id}/answer", post(post_answer))
        .route("/sessions/{id}/heatmaps/{which}", get(get_heatmap))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({ "status": "ok", "models_loaded": state.0.models.is_some() }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub scene_seed: Option<u64>,
    pub scene: Option<Scene>,
    /// Hidden intended block, needed for scoring and oracle answers.
    pub target: Option<u32>,
    /// Seed of the dropout sampling.
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    /// Exposes block ground truth and the target in responses.
    #[serde(default)]
    pub debug: bool,
}

fn links(id: &str, which: &[&str]) -> Value {
    which.iter().map(|w| (format!("{w}_url"), Value::from(format!("/sessions/{id}/heatmaps/{w}")))).collect::<serde_json::Map<_, _>>().into()
}

fn blocks_json(blocks: &[Block]) -> Value {
    serde_json::to_value(blocks).expect("blocks serialize")
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    state.models()?;
    let req: CreateRequest = parse_body(&body)?;
    let n = state.0.next_id.fetch_add(1, Ordering::Relaxed);
    let scene = match (req.scene, req.scene_seed) {
        (Some(_), Some(_)) => return Err(ApiError::BadRequest("give either scene or scene_seed".into())),
        (Some(scene), None) => {
            scene.validate().map_err(|e| ApiError::BadRequest(format!("invalid scene: {e}")))?;
            scene
        }
        (None, seed) => generate_scene(&SceneConfig::default(), seed.unwrap_or(n))?,
    };
    let mut cfg = state.0.config.session.clone();
    cfg.seed = req.seed.unwrap_or(n);
    if let Some(r) = req.rounds {
        cfg.rounds = r;
    }
    let id = format!("s{n:06}");
    let session = Session::new(id.clone(), scene, req.target, cfg).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let mut body = json!({
        "session_id": id,
        "state": session.state(),
        "image_url": format!("/sessions/{id}/image"),
    });
    if req.debug {
        body["blocks"] = blocks_json(&session.scene.blocks);
        body["target"] = json!(session.target());
    }
    state.0.sessions.write().expect("session table").insert(id, Arc::new(Mutex::new(Entry { session, debug: req.debug })));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn resource(e: &Entry) -> Value {
    let s = &e.session;
    let computed: Vec<&str> = HEATMAP_STAGES.into_iter().filter(|w| s.heatmap(w).is_some()).collect();
    let mut v = json!({
        "session_id": s.id,
        "state": s.state(),
        "image_url": format!("/sessions/{}/image", s.id),
        "heatmaps": links(&s.id, &computed),
        "question": s.pending_question().map(|q| json!({ "id": q.id, "text": q.text })),
        "pick": s.final_pick().or(s.latest().map(|e| e.pick)).map(|p| p.xy()),
        "outcome": s.outcome(),
        "command": s.command().map(|c| c.text.clone()),
    });
    if e.debug {
        v["blocks"] = blocks_json(&s.scene.blocks);
        v["target"] = json!(s.target());
    }
    v
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    with_session(&state, &id, |e, _| Ok(Json(resource(e)))).await
}

async fn get_image(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let png = with_session(&state, &id, |e, _| Ok(e.session.image().encode_png()?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    #[serde(default)]
    pub text: String,
}

fn question_json(s: &Session, catalog: &QuestionCatalog) -> Value {
    let Some(q) = s.pending_question() else { return json!({ "question": null, "ranking": [] }) };
    let ranking: Vec<Value> = s.rounds().last().expect("asked").ranking[..RANKING_LEN]
        .iter()
        .map(|&i| {
            let q = catalog.get(i).expect("ranked id in catalog");
            json!({ "id": q.id, "text": q.text })
        })
        .collect();
    json!({ "question": { "id": q.id, "text": q.text }, "ranking": ranking })
}

fn finish_if_possible(e: &mut Entry, dir: Option<&Path>) -> ApiResult<()> {
    let s = &mut e.session;
    if matches!(s.state(), SessionState::Estimated | SessionState::ReEstimated) && !s.can_ask() {
        s.finish()?;
    }
    if s.state() == SessionState::Done {
        if let Some(dir) = dir {
            write_through(s, dir)?;
        }
    }
    Ok(())
}

fn write_through(s: &Session, dir: &Path) -> ApiResult<()> {
    std::fs::create_dir_all(dir).map_err(CoreError::from)?;
    std::fs::write(dir.join(format!("{}.json", s.id)), s.transcript().to_json()).map_err(CoreError::from)?;
    s.write_heatmaps(&dir.join("heatmaps"))?;
    Ok(())
}

fn step_response(e: &Entry, catalog: &QuestionCatalog, stages: &[&str]) -> Value {
    let s = &e.session;
    let mut v = links(&s.id, stages);
    let q = question_json(s, catalog);
    v["question"] = q["question"].clone();
    v["ranking"] = q["ranking"].clone();
    v["state"] = json!(s.state());
    v["pick"] = json!(s.final_pick().or(s.latest().map(|e| e.pick)).map(|p| p.xy()));
    v["command"] = json!(s.command().map(|c| c.text.clone()));
    v["final"] = json!(s.state() == SessionState::Done);
    if let Some(o) = s.outcome() {
        v["outcome"] = json!(o);
    }
    v
}

async fn post_command(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: CommandRequest = parse_body(&body)?;
    let dir = state.0.config.transcript_dir.clone();
    with_session(&state, &id, move |e, m| {
        let s = &mut e.session;
        if s.state() != SessionState::AwaitCommand {
            return Err(CoreError::State { expected: SessionState::AwaitCommand.to_string(), actual: s.state().to_string() }.into());
        }
        if req.text.trim().is_empty() {
            return Err(CoreError::EmptyCommand.into());
        }
        s.submit_command(&m.t2p, Command::from_text(&req.text, &m.vocab)?)?;
        if s.can_ask() {
            s.ask(&m.qgn, &m.catalog)?;
        }
        finish_if_possible(e, dir.as_deref())?;
        Ok(Json(step_response(e, &m.catalog, &["position", "uncertainty", "confidence"])))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub text: Option<String>,
    /// Let the simulated human answer; needs a session target.
    #[serde(default)]
    pub oracle: bool,
}

async fn post_answer(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: AnswerRequest = parse_body(&body)?;
    let dir = state.0.config.transcript_dir.clone();
    with_session(&state, &id, move |e, m| {
        let s = &mut e.session;
        if s.state() != SessionState::Asked {
            return Err(CoreError::State { expected: SessionState::Asked.to_string(), actual: s.state().to_string() }.into());
        }
        let verdict = match (req.oracle, req.text) {
            (true, None) => {
                if s.target().is_none() {
                    return Err(ApiError::BadRequest("oracle answers need a session target".into()));
                }
                Some(s.answer_with_oracle(&m.vocab)?)
            }
            (false, Some(text)) => {
                if text.trim().is_empty() {
                    return Err(CoreError::EmptyCommand.into());
                }
                s.answer(Answer::parse(&text, &m.vocab)?, &m.vocab)?;
                None
            }
            _ => return Err(ApiError::BadRequest("give exactly one of text or oracle".into())),
        };
        if s.state() == SessionState::Answered {
            s.reestimate(&m.t2p)?;
            if s.can_ask() {
                s.ask(&m.qgn, &m.catalog)?;
            }
        }
        finish_if_possible(e, dir.as_deref())?;
        let mut v = step_response(e, &m.catalog, &["position_post", "uncertainty_post", "confidence_post"]);
        if let Some(verdict) = verdict {
            v["verdict"] = serde_json::to_value(&verdict).expect("verdict serializes");
            if let OracleVerdict::Answer { text } = verdict {
                v["answer"] = json!(text);
            }
        }
        Ok(Json(v))
    })
    .await
}

#[derive(Serialize)]
struct HeatmapBody {
    name: String,
    side: usize,
    rows: Vec<Vec<f64>>,
}

async fn get_heatmap(
    State(state): State<AppState>,
    UrlPath((id, which)): UrlPath<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    if !HEATMAP_STAGES.contains(&which.as_str()) {
        return Err(ApiError::NotFound);
    }
    let binary = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|a| a.contains("application/octet-stream"));
    with_session(&state, &id, move |e, _| {
        let h = e.session.heatmap(&which).ok_or(ApiError::NotFound)?;
        Ok(if binary {
            ([(header::CONTENT_TYPE, "application/octet-stream")], h.to_bytes()).into_response()
        } else {
            Json(HeatmapBody { side: h.side(), rows: h.to_rows(), name: which }).into_response()
        })
    })
    .await
}

async fn get_transcript(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Transcript>> {
    with_session(&state, &id, |e, _| {
        let mut t = e.session.transcript();
        if !e.debug {
            t.target = None;
        }
        Ok(Json(t))
    })
    .await
}
