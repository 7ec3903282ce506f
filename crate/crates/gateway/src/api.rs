//! REST endpoints.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/questionnaires` | 201 manifest |
//! | POST | `/questionnaires/import` | 201 manifest, or 200 in preview mode |
//! | GET | `/questionnaires` | 200 manifest list |
//! | GET | `/questionnaires/{id}` | 200 manifest |
//! | POST | `/sessions` | 200 session record |
//! | GET | `/sessions` | 200 summary list |
//! | GET | `/sessions/{id}` | 200 session record |
//! | GET | `/sessions/{id}/results` | 200 results document |
//! | POST | `/sessions/{id}/advice` | 200 session record |
//! | GET | `/sessions/{id}/audio/{name}` | 200 `audio/wav` |
//!
//! Every error body is `{"error": code, "message": text}`, plus `problems`
//! for manifest diagnostics and `session` when an aborted record exists.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::multipart::{Multipart, MultipartRejection};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use carevoice_core::audio::{parse_wav, AudioClip};
use carevoice_core::language::LanguageTag;
use carevoice_core::providers::Providers;
use carevoice_core::questionnaire::{extract_questions, FieldProblem, Questionnaire, QuestionnaireError};
use carevoice_core::session::{
    run_session, AbortCause, ScriptedAudio, SessionContext, SessionError, SessionPolicy, SessionRecord, Turn,
};
use carevoice_core::store::{SessionFilter, Store, StoreError};
use serde::{Deserialize, Serialize};

use crate::results::ResultsDocument;

/// Upload cap for one multipart session submission.
pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

pub const DEFAULT_DEVICE_ID: &str = "upload";

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    providers: Providers,
    policy: SessionPolicy,
    devices: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(store: Store, providers: Providers, policy: SessionPolicy) -> Self {
        AppState {
            inner: Arc::new(Inner {
                store,
                providers,
                policy,
                devices: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    fn device_lock(&self, device_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut devices = self.inner.devices.lock().unwrap();
        devices.entry(device_id.to_string()).or_default().clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/questionnaires", post(create_questionnaire).get(list_questionnaires))
        .route("/questionnaires/import", post(import_questionnaire))
        .route("/questionnaires/{id}", get(get_questionnaire))
        .route("/sessions", post(submit_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/results", get(get_results))
        .route("/sessions/{id}/advice", post(post_advice))
        .route("/sessions/{id}/audio/{name}", get(get_audio))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub problems: Vec<FieldProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<Box<SessionRecord>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: code.into(),
                message: message.into(),
                problems: Vec::new(),
                session: None,
            },
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            StoreError::AlreadyExists(_) => (StatusCode::CONFLICT, "already_exists"),
            StoreError::InvalidRecord(_) => (StatusCode::BAD_REQUEST, "invalid_record"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<QuestionnaireError> for ApiError {
    fn from(e: QuestionnaireError) -> Self {
        let mut err = ApiError::bad_request("invalid_manifest", e.to_string());
        err.body.problems = e.problems().to_vec();
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request("invalid_body", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request("invalid_query", e.body_text())
    }
}

impl From<MultipartRejection> for ApiError {
    fn from(e: MultipartRejection) -> Self {
        ApiError::bad_request("invalid_multipart", e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Blocking store and engine work runs off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn create_questionnaire(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Questionnaire>)> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))?;
    let q = Questionnaire::from_json(text)?;
    let saved = q.clone();
    blocking(move || Ok(state.store().save_questionnaire(&saved)?)).await?;
    Ok((StatusCode::CREATED, Json(q)))
}

#[derive(Debug, Deserialize)]
pub struct ImportRequest {
    pub id: Option<String>,
    pub title: String,
    pub specialist_language: LanguageTag,
    pub welcome_text: String,
    pub document: String,
    #[serde(default)]
    pub preview: bool,
}

async fn import_questionnaire(
    State(state): State<AppState>,
    body: Result<Json<ImportRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Questionnaire>)> {
    let Json(req) = body?;
    let questions = extract_questions(&req.document);
    if questions.is_empty() {
        return Err(ApiError::bad_request("no_questions", "the document contains no sentence ending in '?'"));
    }
    let id = req.id.unwrap_or_else(|| format!("q-{}", uuid::Uuid::new_v4().simple()));
    let q = Questionnaire::new(id, req.title, req.specialist_language, req.welcome_text, questions)?;
    if req.preview {
        return Ok((StatusCode::OK, Json(q)));
    }
    let saved = q.clone();
    blocking(move || Ok(state.store().save_questionnaire(&saved)?)).await?;
    Ok((StatusCode::CREATED, Json(q)))
}

async fn list_questionnaires(State(state): State<AppState>) -> ApiResult<Json<Vec<Questionnaire>>> {
    Ok(Json(blocking(move || Ok(state.store().list_questionnaires()?)).await?))
}

async fn get_questionnaire(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Questionnaire>> {
    Ok(Json(blocking(move || Ok(state.store().load_questionnaire(&id)?)).await?))
}

/// Uploaded takes keyed by turn, in upload order.
#[derive(Debug, Default)]
struct Submission {
    questionnaire_id: Option<String>,
    device_id: Option<String>,
    takes: Vec<(Turn, AudioClip)>,
}

/// `welcome` or `answer-N` (1-based), with an optional `.wav` suffix.
fn turn_for(field: &str) -> Option<Result<Turn, String>> {
    let name = field.strip_suffix(".wav").unwrap_or(field);
    if name == "welcome" {
        return Some(Ok(Turn::Welcome));
    }
    let n = name.strip_prefix("answer-")?;
    Some(match n.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(Turn::Question(n - 1)),
        _ => Err(format!("field {field:?}: answer numbers start at 1")),
    })
}

async fn read_submission(mut multipart: Multipart) -> ApiResult<Submission> {
    let mut sub = Submission::default();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?;
        let text = || {
            String::from_utf8(bytes.to_vec())
                .map(|s| s.trim().to_string())
                .map_err(|_| ApiError::bad_request("invalid_field", format!("field {name:?} is not UTF-8")))
        };
        match name.as_str() {
            "questionnaire_id" => sub.questionnaire_id = Some(text()?),
            "device_id" => sub.device_id = Some(text()?),
            _ => match turn_for(&name) {
                Some(Ok(turn)) => {
                    let clip = parse_wav(&bytes)
                        .map_err(|e| ApiError::bad_request("malformed_wav", format!("field {name:?}: {e}")))?;
                    sub.takes.push((turn, clip));
                }
                Some(Err(msg)) => return Err(ApiError::bad_request("invalid_field", msg)),
                None => return Err(ApiError::bad_request("invalid_field", format!("unexpected field {name:?}"))),
            },
        }
    }
    Ok(sub)
}

async fn submit_session(
    State(state): State<AppState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<Json<SessionRecord>> {
    let sub = read_submission(multipart?).await?;
    let qid = sub
        .questionnaire_id
        .ok_or_else(|| ApiError::bad_request("missing_field", "questionnaire_id is required"))?;
    let device_id = sub.device_id.unwrap_or_else(|| DEFAULT_DEVICE_ID.to_string());
    if device_id.is_empty() {
        return Err(ApiError::bad_request("invalid_field", "device_id must not be empty"));
    }
    let lookup = state.clone();
    let lookup_id = qid.clone();
    let (q, prompts) = blocking(move || {
        let q = lookup.store().load_questionnaire(&lookup_id)?;
        let prompts = lookup.store().prompt_caches(&q);
        Ok((q, prompts))
    })
    .await?;
    if let Some((Turn::Question(i), _)) = sub.takes.iter().find(|(t, _)| matches!(t, Turn::Question(i) if *i >= q.questions.len())) {
        return Err(ApiError::bad_request(
            "invalid_field",
            format!("answer-{} has no question (questionnaire has {})", i + 1, q.questions.len()),
        ));
    }

    let device = state.device_lock(&device_id);
    let _guard = device.lock_owned().await;
    let record = blocking(move || {
        let mut audio = ScriptedAudio::new();
        for (turn, clip) in sub.takes {
            audio.push_take(turn, clip);
        }
        let ctx = SessionContext {
            questionnaire: &q,
            providers: &state.inner.providers,
            policy: &state.inner.policy,
            device_id: &device_id,
            prompts: &prompts,
        };
        run_session(&ctx, &mut audio, state.store(), &mut ()).map_err(session_error)
    })
    .await?;
    Ok(Json(record))
}

fn session_error(e: SessionError) -> ApiError {
    match e {
        SessionError::Aborted { record, cause } => {
            let (status, code) = match cause {
                AbortCause::Provider(_) => (StatusCode::BAD_GATEWAY, "provider_unavailable"),
                AbortCause::Audio(_) => (StatusCode::INTERNAL_SERVER_ERROR, "audio"),
                AbortCause::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            };
            let mut err = ApiError::new(status, code, cause.to_string());
            err.body.session = Some(record);
            err
        }
        SessionError::Store(e) => e.into(),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "session", other.to_string()),
    }
}

async fn list_sessions(
    State(state): State<AppState>,
    filter: Result<Query<SessionFilter>, QueryRejection>,
) -> ApiResult<Json<Vec<carevoice_core::store::SessionSummary>>> {
    let Query(filter) = filter?;
    Ok(Json(blocking(move || Ok(state.store().list_sessions(&filter)?)).await?))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionRecord>> {
    Ok(Json(blocking(move || Ok(state.store().load_session(&id)?)).await?))
}

async fn get_results(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ResultsDocument>> {
    let record = blocking(move || Ok(state.store().load_session(&id)?)).await?;
    Ok(Json(ResultsDocument::from(&record)))
}

#[derive(Debug, Deserialize)]
pub struct AdviceRequest {
    pub advice: String,
}

async fn post_advice(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AdviceRequest>, JsonRejection>,
) -> ApiResult<Json<SessionRecord>> {
    let Json(req) = body?;
    if req.advice.trim().is_empty() {
        return Err(ApiError::bad_request("invalid_body", "advice must not be empty"));
    }
    Ok(Json(blocking(move || Ok(state.store().attach_advice(&id, &req.advice)?)).await?))
}

async fn get_audio(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let bytes = blocking(move || Ok(state.store().read_attachment(&id, &name)?)).await?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

/// Serves `router` on `listener` until the process stops.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
