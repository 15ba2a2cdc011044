use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use metric_prefs::datastore::{choice_records, validate_files, ExclusionReport, EXCLUSIONS, RESPONSES};
use metric_prefs::StudyBundle;
use metric_prefs_survey::{router, Survey, SurveyConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn app(config: SurveyConfig) -> Router {
    router(Arc::new(Survey::new(config).unwrap()))
}

async fn start(app: &Router) -> String {
    let (s, v) = json_call(app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(v["consent_text"].as_str().unwrap().contains("agree"));
    v["session_id"].as_str().unwrap().to_string()
}

/// Walks consent, scenario and attention; returns after the attention answer.
async fn through_attention(app: &Router, id: &str, correct: bool) {
    let base = format!("/sessions/{id}");
    let (_, step) = json_call(app, "GET", &format!("{base}/next"), None).await;
    assert_eq!(step["phase"], "consent");
    assert_eq!(json_call(app, "POST", &format!("{base}/consent"), Some(json!({"agree": true}))).await.0, StatusCode::OK);
    let (_, step) = json_call(app, "GET", &format!("{base}/next"), None).await;
    assert_eq!(step["phase"], "scenario");
    assert_eq!(json_call(app, "POST", &format!("{base}/scenario"), None).await.0, StatusCode::OK);
    let (_, step) = json_call(app, "GET", &format!("{base}/next"), None).await;
    assert_eq!(step["phase"], "attention");
    let answer = if correct { 1 } else { 0 };
    let item = step["item_id"].clone();
    let (s, _) = json_call(app, "POST", &format!("{base}/attention"), Some(json!({"item_id": item, "answer": answer}))).await;
    assert_eq!(s, StatusCode::OK);
}

/// Answers every task with model_1 and returns the task ids seen.
async fn through_tasks(app: &Router, id: &str) -> Vec<String> {
    let base = format!("/sessions/{id}");
    let mut seen = Vec::new();
    loop {
        let (_, step) = json_call(app, "GET", &format!("{base}/next"), None).await;
        if step["phase"] != "task" {
            assert_eq!(step["phase"], "demographics");
            return seen;
        }
        assert_eq!(step["rows"].as_array().unwrap().len(), 10);
        assert_eq!(step["highlighted"].as_array().unwrap().len(), 2);
        assert_eq!(step["index"].as_u64().unwrap() as usize, seen.len());
        let task_id = step["task_id"].as_str().unwrap().to_string();
        let (s, _) = json_call(app, "POST", &format!("{base}/choice"), Some(json!({"task_id": task_id, "chosen": "model_1"}))).await;
        assert_eq!(s, StatusCode::OK);
        seen.push(task_id);
    }
}

async fn demographics(app: &Router, id: &str, age: &str, repeated: &str) {
    let body = json!({
        "profile": {"age_band": age, "gender": "female", "race": "White", "education": "4-year degree", "income_band": null},
        "repeated_answer": repeated,
    });
    let (s, v) = json_call(app, "POST", &format!("/sessions/{id}/demographics"), Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (_, step) = json_call(app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(step["phase"], "done");
}

async fn export(app: &Router) -> BTreeMap<String, Vec<u8>> {
    let (s, bytes) = call(app, "GET", "/export", None).await;
    assert_eq!(s, StatusCode::OK);
    let mut zip = zip::ZipArchive::new(Cursor::new(bytes)).unwrap();
    let mut files = BTreeMap::new();
    for i in 0..zip.len() {
        let mut f = zip.by_index(i).unwrap();
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).unwrap();
        files.insert(f.name().to_string(), buf);
    }
    files
}

#[tokio::test]
async fn happy_path_exports_twenty_choice_records() {
    let app = app(SurveyConfig { seed: 1, ..SurveyConfig::default() });
    let id = start(&app).await;
    through_attention(&app, &id, true).await;
    let tasks = through_tasks(&app, &id).await;
    assert_eq!(tasks.len(), 20);
    demographics(&app, &id, "25-34", "25-34").await;

    let files = export(&app).await;
    let report = validate_files(&files);
    assert!(report.is_valid(), "{report:?}");
    let bundle = StudyBundle::from_files(&files, std::path::Path::new("export")).unwrap();
    let records = choice_records(&bundle.sessions, &bundle.responses).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records.values().next().unwrap().len(), 20);
    assert_eq!(bundle.responses[0].session_id, id);
    assert!(!bundle.responses[0].flags.attention_failed);
    assert_eq!(bundle.profiles[0].participant_id, bundle.responses[0].respondent_id);
    assert!(bundle.exclusions.unwrap().excluded.is_empty());
}

#[tokio::test]
async fn stale_choice_is_a_conflict_without_state_change() {
    let app = app(SurveyConfig::default());
    let id = start(&app).await;
    through_attention(&app, &id, true).await;
    let (_, first) = json_call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    let first_id = first["task_id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{id}/choice");
    let post = |task: String| json_call(&app, "POST", &uri, Some(json!({"task_id": task, "chosen": "model_2"})));
    assert_eq!(post(first_id.clone()).await.0, StatusCode::OK);
    let (_, before) = json_call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    let (s, body) = post(first_id).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("not the issued task"));
    let (_, after) = json_call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["index"], 1);
}

#[tokio::test]
async fn out_of_order_submission_is_a_conflict() {
    let app = app(SurveyConfig::default());
    let id = start(&app).await;
    let (s, _) = json_call(&app, "POST", &format!("/sessions/{id}/choice"), Some(json!({"task_id": "x", "chosen": "model_1"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = json_call(&app, "POST", &format!("/sessions/{id}/demographics"), Some(json!({"profile": {}}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let app = app(SurveyConfig::default());
    assert_eq!(json_call(&app, "GET", "/sessions/nope/next", None).await.0, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "POST", "/sessions/nope/consent", Some(json!({"agree": true}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_payloads_get_field_messages() {
    let app = app(SurveyConfig { tasks: 2, ..SurveyConfig::default() });
    let id = start(&app).await;
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/consent"), Some(json!({"agree": "yes"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["fields"]["agree"], "must be a boolean");

    let (s, bytes) = call(&app, "POST", &format!("/sessions/{id}/consent"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8(bytes).unwrap().contains("agree"));

    through_attention(&app, &id, true).await;
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/choice"), Some(json!({"chosen": "left"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["fields"]["task_id"], "is required");
    assert!(v["fields"]["chosen"].as_str().unwrap().contains("model_1"));

    let req = Request::builder()
        .method("POST")
        .uri(format!("/sessions/{id}/choice"))
        .body(Body::from("{not json"))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);

    through_tasks(&app, &id).await;
    let body = json!({"profile": {"age_band": "ancient", "favourite_colour": "red"}, "repeated_answer": 3});
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/demographics"), Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["fields"]["profile.favourite_colour"], "unknown attribute");
    assert_eq!(v["fields"]["repeated_answer"], "must be a string or null");
    let body = json!({"profile": {"age_band": "ancient"}});
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/demographics"), Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["fields"]["profile.age_band"].as_str().unwrap().contains("ancient"));
}

#[tokio::test]
async fn failed_attention_check_completes_but_is_excluded() {
    let app = app(SurveyConfig { tasks: 3, ..SurveyConfig::default() });
    let good = start(&app).await;
    let bad = start(&app).await;
    let contradictory = start(&app).await;
    let unfinished = start(&app).await;
    for (id, correct, repeat) in [(&good, true, "25-34"), (&bad, false, "25-34"), (&contradictory, true, "45-54")] {
        through_attention(&app, id, correct).await;
        through_tasks(&app, id).await;
        demographics(&app, id, "25-34", repeat).await;
    }
    through_attention(&app, &unfinished, true).await;

    let files = export(&app).await;
    assert!(validate_files(&files).is_valid(), "{:?}", validate_files(&files));
    let report: ExclusionReport = serde_json::from_slice(&files[EXCLUSIONS]).unwrap();
    assert_eq!(report.incomplete_sessions, vec![unfinished]);
    let by_session: BTreeMap<_, _> = report.excluded.iter().map(|e| (e.session_id.clone(), e.reasons.clone())).collect();
    assert_eq!(by_session.len(), 2);
    assert_eq!(by_session[&bad], vec!["attention_failed".to_string()]);
    assert_eq!(by_session[&contradictory], vec!["contradictory".to_string()]);
    let responses: Value = serde_json::from_slice(&files[RESPONSES]).unwrap();
    assert_eq!(responses.as_array().unwrap().len(), 3);

    let bundle = StudyBundle::from_files(&files, std::path::Path::new("export")).unwrap();
    let included: Vec<_> = bundle.included_responses().map(|r| r.session_id.clone()).collect();
    assert_eq!(included, vec![good]);
}

#[tokio::test]
async fn declined_consent_is_not_exported() {
    let app = app(SurveyConfig::default());
    let id = start(&app).await;
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/consent"), Some(json!({"agree": false}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["phase"], "withdrawn");
    let files = export(&app).await;
    let report: ExclusionReport = serde_json::from_slice(&files[EXCLUSIONS]).unwrap();
    assert_eq!(report.incomplete_sessions, vec![id]);
}

#[tokio::test]
async fn concurrent_sessions_are_isolated() {
    let app = app(SurveyConfig { tasks: 4, ..SurveyConfig::default() });
    let mut handles = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let id = start(&app).await;
            through_attention(&app, &id, true).await;
            let tasks = through_tasks(&app, &id).await;
            demographics(&app, &id, "35-44", "35-44").await;
            (id, tasks)
        }));
    }
    let mut expected = BTreeMap::new();
    for h in handles {
        let (id, tasks) = h.await.unwrap();
        expected.insert(id, tasks);
    }
    let files = export(&app).await;
    assert!(validate_files(&files).is_valid());
    let bundle = StudyBundle::from_files(&files, std::path::Path::new("export")).unwrap();
    assert_eq!(bundle.responses.len(), 8);
    for r in &bundle.responses {
        let got: Vec<_> = r.choices.iter().map(|c| c.task_id.clone()).collect();
        assert_eq!(got, expected[&r.session_id]);
    }
}
