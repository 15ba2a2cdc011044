//! JSON-over-HTTP routes.
//!
//! | route | body | effect |
//! |---|---|---|
//! | `POST /sessions` | none | new session: `{session_id, consent_text}` |
//! | `GET /sessions/{id}/next` | none | current step payload |
//! | `POST /sessions/{id}/consent` | `{agree}` | consent to scenario, or withdraw |
//! | `POST /sessions/{id}/scenario` | none | scenario read, go to attention |
//! | `POST /sessions/{id}/attention` | `{item_id, answer}` | attention answer |
//! | `POST /sessions/{id}/choice` | `{task_id, chosen}` | choice for the issued task |
//! | `POST /sessions/{id}/demographics` | `{profile, repeated_answer}` | questionnaire, computes flags |
//! | `GET /export` | none | zip of the completed-session bundle |
//!
//! Errors: 404 unknown session, 409 out-of-order or stale submission (state
//! unchanged), 400 malformed payload with a `fields` map of messages.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use metric_prefs::association::Attribute;
use serde_json::{json, Map, Value};

use crate::service::Survey;
use crate::session::{DisplayedModel, Phase, Session, SessionError};

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    BadRequest(BTreeMap<String, String>),
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Conflict(m) => ApiError::Conflict(m),
            SessionError::Invalid(f) => ApiError::BadRequest(f),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::BadRequest(fields) => (StatusCode::BAD_REQUEST, json!({ "error": "invalid payload", "fields": fields })),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad(field: &str, message: impl Into<String>) -> ApiError {
    ApiError::BadRequest(BTreeMap::from([(field.to_string(), message.into())]))
}

/// Parses a JSON object body. An empty body counts as `{}`.
fn object(body: &Bytes) -> ApiResult<Map<String, Value>> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(bad("body", "expected a JSON object")),
        Err(e) => Err(bad("body", format!("not valid JSON: {e}"))),
    }
}

fn string_field<'a>(m: &'a Map<String, Value>, name: &str, problems: &mut BTreeMap<String, String>) -> Option<&'a str> {
    match m.get(name) {
        Some(Value::String(s)) => Some(s),
        Some(_) => {
            problems.insert(name.into(), "must be a string".into());
            None
        }
        None => {
            problems.insert(name.into(), "is required".into());
            None
        }
    }
}

fn check(problems: BTreeMap<String, String>) -> ApiResult<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ApiError::BadRequest(problems))
    }
}

fn with_session<T>(survey: &Survey, id: &str, f: impl FnOnce(&mut Session) -> ApiResult<T>) -> ApiResult<T> {
    let session = survey
        .session(id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))?;
    let mut guard = session.lock().map_err(|_| ApiError::Internal("session lock poisoned".into()))?;
    f(&mut guard)
}

fn ack(phase: Phase) -> Json<Value> {
    Json(json!({ "ok": true, "phase": phase }))
}

async fn create(State(survey): State<Arc<Survey>>) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = survey.create_session().map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "consent_text": survey.config().consent_text })),
    ))
}

async fn next(State(survey): State<Arc<Survey>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&survey, &id, |s| {
        Ok(Json(serde_json::to_value(s.next_step(survey.config())).expect("step serializes")))
    })
}

async fn consent(State(survey): State<Arc<Survey>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let m = object(&body)?;
    let agree = match m.get("agree") {
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(bad("agree", "must be a boolean")),
        None => return Err(bad("agree", "is required")),
    };
    with_session(&survey, &id, |s| Ok(ack(s.consent(agree)?)))
}

async fn scenario(State(survey): State<Arc<Survey>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    object(&body)?;
    with_session(&survey, &id, |s| Ok(ack(s.acknowledge_scenario()?)))
}

async fn attention(State(survey): State<Arc<Survey>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let m = object(&body)?;
    let mut problems = BTreeMap::new();
    let item_id = string_field(&m, "item_id", &mut problems);
    let answer = match m.get("answer") {
        Some(v) => v.as_u64().or_else(|| {
            problems.insert("answer".into(), "must be a non-negative integer".into());
            None
        }),
        None => {
            problems.insert("answer".into(), "is required".into());
            None
        }
    };
    check(problems)?;
    let (item_id, answer) = (item_id.expect("checked"), answer.expect("checked"));
    with_session(&survey, &id, |s| Ok(ack(s.answer_attention(item_id, answer as usize)?)))
}

async fn choice(State(survey): State<Arc<Survey>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let m = object(&body)?;
    let mut problems = BTreeMap::new();
    let task_id = string_field(&m, "task_id", &mut problems);
    let chosen = string_field(&m, "chosen", &mut problems).and_then(|c| match c {
        "model_1" => Some(DisplayedModel::Model1),
        "model_2" => Some(DisplayedModel::Model2),
        _ => {
            problems.insert("chosen".into(), "must be \"model_1\" or \"model_2\"".into());
            None
        }
    });
    check(problems)?;
    let (task_id, chosen) = (task_id.expect("checked"), chosen.expect("checked"));
    with_session(&survey, &id, |s| Ok(ack(s.choose(task_id, chosen)?)))
}

async fn demographics(State(survey): State<Arc<Survey>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let m = object(&body)?;
    let mut problems = BTreeMap::new();
    let mut answers = BTreeMap::new();
    match m.get("profile") {
        Some(Value::Object(p)) => {
            for (key, value) in p {
                let field = format!("profile.{key}");
                match (key.parse::<Attribute>(), value) {
                    (Err(_), _) => {
                        problems.insert(field, "unknown attribute".into());
                    }
                    (Ok(_), Value::Null) => {}
                    (Ok(a), Value::String(v)) => {
                        answers.insert(a, v.clone());
                    }
                    (Ok(_), _) => {
                        problems.insert(field, "must be a string or null".into());
                    }
                }
            }
        }
        Some(_) => {
            problems.insert("profile".into(), "must be an object".into());
        }
        None => {
            problems.insert("profile".into(), "is required".into());
        }
    }
    let repeated = match m.get("repeated_answer") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            problems.insert("repeated_answer".into(), "must be a string or null".into());
            None
        }
    };
    check(problems)?;
    with_session(&survey, &id, |s| Ok(ack(s.submit_demographics(answers, repeated, survey.config())?)))
}

async fn export(State(survey): State<Arc<Survey>>) -> ApiResult<Response> {
    let bytes = survey.export_zip().map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"study_bundle.zip\""),
        ],
        bytes,
    )
        .into_response())
}

pub fn router(survey: Arc<Survey>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/consent", post(consent))
        .route("/sessions/{id}/scenario", post(scenario))
        .route("/sessions/{id}/attention", post(attention))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/demographics", post(demographics))
        .route("/export", get(export))
        .with_state(survey)
}

/// Serves the survey on a bound listener until the process is stopped.
pub async fn serve(survey: Arc<Survey>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(survey)).await
}
