//! Shared study state and its HTTP/JSON front end.

use std::collections::{BTreeMap, HashSet};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::eventlog::{self, Event};
use crate::manifest::Manifest;
use crate::results::{aggregate, StudyResults};
use crate::session::{Session, Side, SubmitOutcome, TrialView};
use crate::{Error, Result, EXPOSURE_MS, PRACTICE_TRIALS, TEST_TRIALS};

const MAX_TOKEN_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub algorithm: String,
    pub practice_trials: usize,
    pub test_trials: usize,
    pub exposure_ms: u64,
    pub next_trial: usize,
}

#[derive(Debug)]
struct Store {
    dir: PathBuf,
    sessions: BTreeMap<String, Session>,
    participants: HashSet<(String, String)>,
    rng: ChaCha8Rng,
}

/// Sessions, their logs and the manifest. Every operation takes one lock,
/// so operations on a session are serialized and results see a consistent
/// snapshot.
#[derive(Debug)]
pub struct Study {
    manifest: Manifest,
    store: Mutex<Store>,
}

impl Study {
    /// Opens `results_dir` (created if missing) and replays the session logs
    /// found there. Without a seed, session ids and trial orders are drawn
    /// from OS entropy.
    pub fn open(manifest: Manifest, results_dir: impl AsRef<Path>, seed: Option<u64>) -> Result<Self> {
        let dir = results_dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut sessions = BTreeMap::new();
        let mut participants = HashSet::new();
        for s in eventlog::replay_dir(&dir)? {
            participants.insert((s.token.clone(), s.algorithm.clone()));
            sessions.insert(s.id.clone(), s);
        }
        log::info!("replayed {} sessions from {}", sessions.len(), dir.display());
        let rng = match seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_os_rng(),
        };
        Ok(Self { manifest, store: Mutex::new(Store { dir, sessions, participants, rng }) })
    }

    fn lock(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn session_count(&self) -> usize {
        self.lock().sessions.len()
    }

    pub fn session(&self, id: &str) -> Option<Session> {
        self.lock().sessions.get(id).cloned()
    }

    pub fn create_session(&self, algorithm: &str, token: &str) -> Result<SessionDescriptor> {
        if token.is_empty() || token.len() > MAX_TOKEN_LEN {
            return Err(Error::BadRequest(format!("token must be 1 to {MAX_TOKEN_LEN} bytes")));
        }
        let mut store = self.lock();
        let key = (token.to_string(), algorithm.to_string());
        if store.participants.contains(&key) {
            return Err(Error::DuplicateParticipant(algorithm.to_string()));
        }
        let id = format!("{:032x}", store.rng.random::<u128>());
        let seed = store.rng.random::<u64>();
        let session = Session::generate(id.clone(), token.to_string(), algorithm, seed, &self.manifest)?;
        eventlog::create(&eventlog::session_log_path(&store.dir, &id), &session)?;
        store.participants.insert(key);
        store.sessions.insert(id.clone(), session);
        Ok(SessionDescriptor {
            session_id: id,
            algorithm: algorithm.to_string(),
            practice_trials: PRACTICE_TRIALS,
            test_trials: TEST_TRIALS,
            exposure_ms: EXPOSURE_MS,
            next_trial: 0,
        })
    }

    pub fn trial(&self, id: &str, n: usize) -> Result<TrialView> {
        let store = self.lock();
        let s = store.sessions.get(id).ok_or_else(|| Error::UnknownSession(id.to_string()))?;
        s.view(n)
    }

    pub fn submit(&self, id: &str, n: usize, side: Side, response_ms: u64) -> Result<SubmitOutcome> {
        let mut store = self.lock();
        let path = eventlog::session_log_path(&store.dir, id);
        let s = store.sessions.get_mut(id).ok_or_else(|| Error::UnknownSession(id.to_string()))?;
        // Validate on a copy so a failed write leaves memory and log in step.
        let mut next = s.clone();
        let out = next.submit(n, side, response_ms)?;
        if out.recorded {
            eventlog::append(&path, &Event::Choice { n, side, response_ms })?;
            *s = next;
        }
        Ok(out)
    }

    pub fn results(&self, algorithm: &str) -> Result<StudyResults> {
        if self.manifest.pairs(algorithm).is_none() {
            return Err(Error::UnknownAlgorithm(algorithm.to_string()));
        }
        aggregate(self.lock().sessions.values(), algorithm)
    }
}

impl Error {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            Error::UnknownAlgorithm(_) => (StatusCode::NOT_FOUND, "unknown_algorithm"),
            Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            Error::NoSuchTrial(_) => (StatusCode::NOT_FOUND, "no_such_trial"),
            Error::UnknownImage(_) => (StatusCode::NOT_FOUND, "unknown_image"),
            Error::NoCompletedSessions(_) => (StatusCode::NOT_FOUND, "no_completed_sessions"),
            Error::InsufficientPairs { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_pairs"),
            Error::DuplicateParticipant(_) => (StatusCode::CONFLICT, "duplicate_participant"),
            Error::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
            Error::ConflictingChoice(_) => (StatusCode::CONFLICT, "conflicting_choice"),
            Error::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let mut body = json!({ "code": code, "message": self.to_string() });
        if let Error::OutOfOrder { cursor, .. } = self {
            body["cursor"] = cursor.into();
        }
        (status, Json(body)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| Error::BadRequest(e.to_string()))
}

fn parse_index(n: &str) -> Result<usize> {
    n.parse().map_err(|_| Error::BadRequest(format!("trial index `{n}` is not a non-negative integer")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    algorithm: String,
    token: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceRequest {
    n: usize,
    side: Side,
    response_ms: u64,
}

type AppState = State<Arc<Study>>;

async fn create_session(State(study): AppState, body: Bytes) -> Result<(StatusCode, Json<SessionDescriptor>)> {
    let req: CreateRequest = parse_body(&body)?;
    Ok((StatusCode::CREATED, Json(study.create_session(&req.algorithm, &req.token)?)))
}

async fn get_trial(State(study): AppState, UrlPath((id, n)): UrlPath<(String, String)>) -> Result<Json<TrialView>> {
    let mut view = study.trial(&id, parse_index(&n)?)?;
    view.left = format!("/images/{}", view.left);
    view.right = format!("/images/{}", view.right);
    Ok(Json(view))
}

async fn submit_choice(State(study): AppState, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<SubmitOutcome>> {
    let req: ChoiceRequest = parse_body(&body)?;
    Ok(Json(study.submit(&id, req.n, req.side, req.response_ms)?))
}

async fn results(State(study): AppState, UrlPath(algorithm): UrlPath<String>) -> Result<Json<StudyResults>> {
    Ok(Json(study.results(&algorithm)?))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm") => "image/x-portable-pixmap",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn image(State(study): AppState, UrlPath(r): UrlPath<String>) -> Result<Response> {
    let path = study.manifest().image_path(&r).ok_or_else(|| Error::UnknownImage(r.clone()))?.to_path_buf();
    let bytes = tokio::fs::read(&path).await.map_err(|e| Error::io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn healthz(State(study): AppState) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "sessions": study.session_count() }))
}

async fn not_found() -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "code": "not_found", "message": "no such endpoint" }))).into_response()
}

pub fn router(study: Arc<Study>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/trials/{n}", get(get_trial))
        .route("/api/sessions/{id}/choices", post(submit_choice))
        .route("/api/results/{algorithm}", get(results))
        .route("/images/{*ref}", get(image))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .with_state(study)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
/// Every recorded event is already on disk by the time its request returns.
pub async fn serve(
    listener: tokio::net::TcpListener,
    study: Arc<Study>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(study)).with_graceful_shutdown(shutdown).await
}
