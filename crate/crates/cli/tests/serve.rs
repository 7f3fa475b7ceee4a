use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mobilicities_cli::pipeline::run_pipeline;
use mobilicities_cli::serve::app;
use mobilicities_cli::Settings;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

fn tiny_run() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let flags = [
        ("synth", "tiny".to_owned()),
        ("k", "2".to_owned()),
        ("out", dir.path().display().to_string()),
    ];
    run_pipeline(&Settings::resolve(None, &flags).unwrap()).unwrap();
    dir
}

async fn call(router: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_owned())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, value)
}

async fn get(router: &Router, uri: &str) -> (StatusCode, Value) {
    call(router, Method::GET, uri, None).await
}

async fn wait_for_job(router: &Router, id: u64) -> Value {
    for _ in 0..600 {
        let (status, job) = get(router, &format!("/api/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        if job["status"] == "done" || job["status"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}

fn router(dir: &Path, allow_compute: bool) -> Router {
    app(dir, allow_compute).unwrap()
}

#[tokio::test]
async fn run_and_towers() {
    let dir = tiny_run();
    let r = router(dir.path(), false);
    let (status, run) = get(&r, "/api/run").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(run["run_id"].as_str().unwrap().len(), 16);
    let (status, towers) = get(&r, "/api/towers").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(towers["towers"].as_array().unwrap().len(), 40);
    assert_eq!(towers["infrastructure"]["type"], "FeatureCollection");
}

#[tokio::test]
async fn components_are_served_per_k() {
    let dir = tiny_run();
    let r = router(dir.path(), false);
    let (status, body) = get(&r, "/api/components?k=2").await;
    assert_eq!(status, StatusCode::OK);
    let comps = body["components"].as_array().unwrap();
    assert_eq!(comps.len(), 2);
    assert!(comps.iter().all(|c| c["type"] == "FeatureCollection"));

    let (status, _) = get(&r, "/api/components?k=3").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&r, "/api/components?k=abc").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, table) = get(&r, "/api/label-association?k=2").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(table["k"], 2);

    let (status, heat) = get(&r, "/api/heatmap?k=2&n=5&seed=1").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(heat["users"].as_array().unwrap().len(), 5);
    let (_, again) = get(&r, "/api/heatmap?k=2&n=5&seed=1").await;
    assert_eq!(heat, again);
}

#[tokio::test]
async fn compute_on_read_when_allowed() {
    let dir = tiny_run();
    let r = router(dir.path(), true);
    let (status, body) = get(&r, "/api/components?k=3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["components"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn factorize_job_lifecycle() {
    let dir = tiny_run();
    let r = router(dir.path(), false);
    let (status, accepted) = call(&r, Method::POST, "/api/factorize", Some(r#"{"k": 3, "seed": 5}"#)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(accepted["status"], "queued");
    let id = accepted["job_id"].as_u64().unwrap();

    let job = wait_for_job(&r, id).await;
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["result"]["k"], 3);
    let out = dir.path().join(job["result"]["output_dir"].as_str().unwrap());
    assert!(out.join("T.csv").exists());

    let (status, body) = get(&r, "/api/components?k=3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["components"].as_array().unwrap().len(), 3);

    let (_, curve) = get(&r, "/api/rss-curve").await;
    let ks: Vec<u64> = curve["points"].as_array().unwrap().iter().map(|p| p["k"].as_u64().unwrap()).collect();
    assert!(ks.contains(&2) && ks.contains(&3), "{ks:?}");

    let (status, _) = get(&r, "/api/jobs/999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn factorize_rejects_bad_bodies() {
    let dir = tiny_run();
    let r = router(dir.path(), false);
    for body in ["not json", r#"{"k": 0}"#, r#"{"k": 100000}"#, r#"{"kay": 3}"#, r#"{"k": 2, "restarts": 0}"#] {
        let (status, err) = call(&r, Method::POST, "/api/factorize", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(err["error"].is_string());
    }
}

#[tokio::test]
async fn component_names_round_trip_and_persist() {
    let dir = tiny_run();
    let r = router(dir.path(), false);
    let (status, _) = call(&r, Method::PUT, "/api/components/2/1/name", Some(r#"{"name": "north line"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, body) = get(&r, "/api/components?k=2").await;
    assert_eq!(body["components"][1]["display_name"], "north line");
    assert!(body["components"][0]["display_name"].is_null());

    let (status, _) = call(&r, Method::PUT, "/api/components/2/7/name", Some(r#"{"name": "x"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&r, Method::PUT, "/api/components/9/0/name", Some(r#"{"name": "x"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&r, Method::PUT, "/api/components/2/0/name", Some("{}")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let reopened = router(dir.path(), false);
    let (_, body) = get(&reopened, "/api/components?k=2").await;
    assert_eq!(body["components"][1]["display_name"], "north line");
}

#[tokio::test]
async fn missing_run_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = app(dir.path(), false).err().unwrap();
    assert_eq!(err.exit_code(), 2);
}
