use std::fs;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cogcubes_service::{router, AppState, ServiceConfig, ASSESSOR_TOKEN_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn write_library(dir: &Path) {
    fs::write(dir.join("l3.txt"), "prototype L3\n0 0 0\n1 0 0\n1 1 0\n").unwrap();
    fs::write(dir.join("bar.txt"), "prototype bar\n0 0 0\n0 0 1\n0 0 2\n").unwrap();
    let lib = json!({
        "name": "demo",
        "tasks": [
            { "task_id": "follow-1", "kind": "follow", "prototype": "l3.txt" },
            { "task_id": "match-1", "kind": "match", "prototype": "bar.txt" },
            { "task_id": "reshape-1", "kind": "reshape", "prototype": "l3.txt" }
        ]
    });
    fs::write(dir.join("library.json"), lib.to_string()).unwrap();
}

struct Fixture {
    _tmp: TempDir,
    root: std::path::PathBuf,
    token: Option<String>,
}

impl Fixture {
    fn new() -> Self {
        Self::with_token(None)
    }

    fn with_token(token: Option<&str>) -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        write_library(&root);
        Fixture { _tmp: tmp, root, token: token.map(str::to_owned) }
    }

    fn config(&self) -> ServiceConfig {
        ServiceConfig {
            sessions_dir: self.root.join("sessions"),
            library: Some(self.root.join("library.json")),
            assessor_token: self.token.clone(),
        }
    }

    fn app(&self) -> Router {
        router(AppState::open(self.config()).unwrap())
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(app, method, uri, body, None).await
}

async fn call_with(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(ASSESSOR_TOKEN_HEADER, t);
    }
    let body = body.map_or(Body::empty(), |b| Body::from(b.to_string()));
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(json!({ "participant_code": "P01" }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_owned()
}

async fn post_cell(app: &Router, id: &str, action: &str, cell: [i32; 3]) -> (StatusCode, Value) {
    let body = json!({ "action": action, "x": cell[0], "y": cell[1], "z": cell[2] });
    call(app, "POST", &format!("/sessions/{id}/events"), Some(body)).await
}

/// Reads SSE frames until the body ends; returns (event name, data) pairs.
async fn read_stream(app: &Router, id: &str) -> Vec<(String, Value)> {
    let req = Request::builder().uri(format!("/sessions/{id}/stream")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let text = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    text.split("\n\n")
        .filter_map(|frame| {
            let mut name = None;
            let mut data = None;
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("event: ") {
                    name = Some(v.to_owned());
                } else if let Some(v) = line.strip_prefix("data: ") {
                    data = Some(serde_json::from_str(v).unwrap());
                }
            }
            Some((name?, data?))
        })
        .collect()
}

fn has_key(v: &Value, key: &str) -> bool {
    match v {
        Value::Object(m) => m.iter().any(|(k, v)| k.contains(key) || has_key(v, key)),
        Value::Array(a) => a.iter().any(|v| has_key(v, key)),
        _ => false,
    }
}

#[tokio::test]
async fn create_session_examples() {
    let fx = Fixture::new();
    let app = fx.app();
    let a = create(&app).await;
    let b = create(&app).await;
    assert_ne!(a, b);
    assert!(fx.root.join("sessions").join(&a).join("manifest.json").is_file());

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "participant_code": "P02", "library": "missing" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "InvalidLibrary");

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "participant_code": "P02", "library": "../library" }))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidLibrary")));

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "participant_code": "P02", "library": "library" }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "nope": 1 }))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("BadRequest")));
}

#[tokio::test]
async fn no_configured_library_is_invalid() {
    let fx = Fixture::new();
    let mut config = fx.config();
    config.library = None;
    let app = router(AppState::open(config).unwrap());
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "participant_code": "P" }))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidLibrary")));
}

#[tokio::test]
async fn events_cues_and_rejections() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app).await;

    let (status, ack) = post_cell(&app, &id, "connect", [1, 0, 0]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["cue"], "connect-chime");
    assert_eq!(ack["event_count"], 1);
    assert_eq!(ack["cube_id"], 1);
    assert!(ack["t"].as_f64().unwrap() > 0.0);

    let (status, err) = post_cell(&app, &id, "connect", [1, 0, 0]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "CellOccupied");
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}/task"), None).await;
    assert_eq!(view["task"]["event_count"], 1);
    assert_eq!(view["task"]["structure"], json!([[0, 0, 0], [1, 0, 0]]));

    let (_, err) = post_cell(&app, &id, "connect", [5, 5, 5]).await;
    assert_eq!(err["error"], "NotAdjacent");
    let (_, err) = post_cell(&app, &id, "disconnect", [0, 0, 0]).await;
    assert_eq!(err["error"], "BaseRemoval");

    let (status, ack) = post_cell(&app, &id, "disconnect", [1, 0, 0]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["cue"], "disconnect-chime");
    assert_eq!(ack["cube_id"], 1);
    assert_eq!(ack["event_count"], 2);

    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/abort"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, err) = post_cell(&app, &id, "connect", [1, 0, 0]).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "WrongPhase");

    let (status, err) = post_cell(&app, "nope", "connect", [1, 0, 0]).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownSession")));
}

#[tokio::test]
async fn server_times_increase_and_client_time_is_kept() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app).await;
    let mut last = 0.0;
    for (k, cell) in [[1, 0, 0], [1, 1, 0], [1, 1, 1]].iter().enumerate() {
        let body = json!({ "action": "connect", "x": cell[0], "y": cell[1], "z": cell[2], "t": 99.0 + k as f64 });
        let (_, ack) = call(&app, "POST", &format!("/sessions/{id}/events"), Some(body)).await;
        let t = ack["t"].as_f64().unwrap();
        assert!(t > last);
        last = t;
    }
    let (_, results) = call(&app, "GET", &format!("/sessions/{id}/results"), None).await;
    let events = results["records"][0]["events"].as_array().unwrap();
    assert_eq!(events.len(), 3);
    assert_eq!(events[2]["client_t"], 101.0);
    assert_eq!(events[2]["t"], last);
}

#[tokio::test]
async fn task_views_and_payload_schema() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app).await;
    let task_uri = format!("/sessions/{id}/task");

    let (status, view) = call(&app, "GET", &task_uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["phase"], "presenting");
    assert_eq!(view["task"]["kind"], "follow");
    assert_eq!(view["task"]["rotation_rpm"], 2.7);
    assert_eq!(view["task"]["guidance"], json!({ "action": "add", "cell": [1, 0, 0] }));

    post_cell(&app, &id, "connect", [1, 0, 0]).await;
    let (_, view) = call(&app, "GET", &task_uri, None).await;
    assert_eq!(view["phase"], "building");
    assert_eq!(view["task"]["guidance"], json!({ "action": "add", "cell": [1, 1, 0] }));

    call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    let (_, view) = call(&app, "GET", &task_uri, None).await;
    assert_eq!(view["task"]["kind"], "match");
    assert!(view["task"].get("guidance").is_none());
    post_cell(&app, &id, "connect", [0, 0, 1]).await;
    let (_, view) = call(&app, "GET", &task_uri, None).await;
    assert!(!has_key(&view, "similarity"), "{view}");
    assert!(!has_key(&view, "score"), "{view}");

    call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    let (_, view) = call(&app, "GET", &task_uri, None).await;
    assert_eq!(view["task"]["kind"], "reshape");
    assert_eq!(view["task"]["structure"].as_array().unwrap().len(), 7);
    assert!(!has_key(&view, "similarity"), "{view}");

    let (status, body) = call(&app, "GET", "/sessions/nope/task", None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownSession")));
}

#[tokio::test]
async fn advancing_past_the_last_task_finishes() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app).await;
    for expected in ["presenting", "presenting", "done"] {
        let (status, t) = call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(t["phase"], expected);
        assert_eq!(t["outcome"], "completed_by_participant");
    }
    let (status, err) = call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("NoActiveTask")));
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}/task"), None).await;
    assert_eq!(view["phase"], "done");
    assert!(view.get("task").is_none());
    let (_, results) = call(&app, "GET", &format!("/sessions/{id}/results"), None).await;
    assert_eq!(results["records"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn stream_sends_one_message_per_event_then_ends() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app).await;
    let live = tokio::spawn({
        let app = app.clone();
        let id = id.clone();
        async move { read_stream(&app, &id).await }
    });
    tokio::task::yield_now().await;
    for cell in [[1, 0, 0], [1, 1, 0]] {
        post_cell(&app, &id, "connect", cell).await;
    }
    post_cell(&app, &id, "disconnect", [1, 1, 0]).await;
    post_cell(&app, &id, "connect", [9, 9, 9]).await; // rejected, no message
    call(&app, "POST", &format!("/sessions/{id}/abort"), None).await;

    let late = read_stream(&app, &id).await;
    let live = live.await.unwrap();
    assert_eq!(live, late);
    let names: Vec<&str> = late.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["trace", "trace", "trace", "end"]);
    let counts: Vec<i64> = late[..3].iter().map(|(_, d)| d["event_count"].as_i64().unwrap()).collect();
    assert_eq!(counts, [1, 2, 3]);
    let sims: Vec<f64> = late[..3].iter().map(|(_, d)| d["similarity"].as_f64().unwrap()).collect();
    assert!((sims[0] - 100.0 * 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(sims[1], 100.0);
    assert!((sims[2] - 100.0 * 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(late[3].1["phase"], "aborted");
}

#[tokio::test]
async fn assessor_token_guards_assessor_endpoints() {
    let fx = Fixture::with_token(Some("s3cret"));
    let app = fx.app();
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "participant_code": "P" }))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNAUTHORIZED, Some("Unauthorized")));
    let (status, body) = call_with(&app, "POST", "/sessions", Some(json!({ "participant_code": "P" })), Some("s3cret")).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap();

    // participant side needs no token
    assert_eq!(post_cell(&app, id, "connect", [1, 0, 0]).await.0, StatusCode::OK);
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}/task"), None).await.0, StatusCode::OK);

    for (method, path) in [("POST", "advance"), ("POST", "abort"), ("GET", "results")] {
        let uri = format!("/sessions/{id}/{path}");
        assert_eq!(call_with(&app, method, &uri, None, Some("wrong")).await.0, StatusCode::UNAUTHORIZED);
    }
    assert_eq!(call_with(&app, "GET", &format!("/sessions/{id}/results"), None, Some("s3cret")).await.0, StatusCode::OK);
}

#[tokio::test]
async fn sessions_survive_reopen() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app).await;
    post_cell(&app, &id, "connect", [1, 0, 0]).await;
    call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    post_cell(&app, &id, "connect", [0, 0, 1]).await;
    post_cell(&app, &id, "connect", [0, 0, 2]).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/results"), None).await;
    let stream_before = {
        call(&app, "POST", &format!("/sessions/{id}/abort"), None).await;
        read_stream(&app, &id).await
    };
    let (_, before_abort_view) = call(&app, "GET", &format!("/sessions/{id}/results"), None).await;
    drop(app);

    let app = fx.app();
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}/results"), None).await;
    assert_eq!(after, before_abort_view);
    assert_eq!(after["records"][1]["events"], before["records"][1]["events"]);
    assert_eq!(after["phase"], "aborted");
    assert_eq!(read_stream(&app, &id).await, stream_before);
}

#[tokio::test]
async fn reopen_drops_a_torn_unacknowledged_line() {
    let fx = Fixture::new();
    let app = fx.app();
    let id = create(&app).await;
    post_cell(&app, &id, "connect", [1, 0, 0]).await;
    drop(app);

    let log = fx.root.join("sessions").join(&id).join("00-follow-1.jsonl");
    let mut text = fs::read_to_string(&log).unwrap();
    text.push_str("{\"t\":9.0,\"action\":\"conn");
    fs::write(&log, text).unwrap();

    let app = fx.app();
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}/task"), None).await;
    assert_eq!(view["task"]["event_count"], 1);
    let (status, ack) = post_cell(&app, &id, "connect", [1, 1, 0]).await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    assert_eq!(ack["event_count"], 2);
    drop(app);
    let app = fx.app();
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}/task"), None).await;
    assert_eq!(view["task"]["event_count"], 2);
}
