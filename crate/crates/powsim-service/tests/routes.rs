use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use powsim_service::{router, ErrorBody, ErrorKind};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn post(path: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn config(name: &str) -> Value {
    json!({
        "bootstrap": {"n0": 200, "alpha": 0.05, "init_duration": 2000},
        "protocol": {"name": name},
        "adversary": {"strategy": "burst", "spend_rate": 64},
        "churn": {"synth": {"preset": "redhat", "rate": 0.1}},
        "sim": {"duration_s": 500, "seed": 3}
    })
}

#[tokio::test]
async fn health_answers() {
    let resp = router().oneshot(Request::get("/health").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[tokio::test]
async fn run_returns_summary_and_csv() {
    let (status, body) = post("/run", config("gmcom")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["summary"]["algorithm"], "gmcom");
    assert!(body["csv"].as_str().unwrap().starts_with("# seed=3 algorithm=gmcom"));
}

#[tokio::test]
async fn invalid_alpha_is_a_config_error() {
    let mut cfg = config("gmcom");
    cfg["bootstrap"]["alpha"] = json!(0.5);
    let (status, body) = post("/run", cfg).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err: ErrorBody = serde_json::from_value(body).unwrap();
    assert_eq!(err.kind, ErrorKind::Config);
}

#[tokio::test]
async fn malformed_json_is_a_config_error() {
    let (status, body) = post("/run", json!({"bootstrap": 1})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["kind"], "config");
}

#[tokio::test]
async fn missing_trace_is_an_io_error() {
    let body = json!({"trace_path": "/nonexistent/trace.csv"});
    let (status, body) = post("/validate", body).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["kind"], "io");
}

#[tokio::test]
async fn sweep_and_bench_round_trip() {
    let req = json!({"config": config("ccom"), "exponents": [0, 3], "algorithms": ["ccom", "gmcom"]});
    let (status, body) = post("/sweep", req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["points"].as_array().unwrap().len(), 4);

    let req = json!({"params": {"mu": 1024, "delta": 0.1, "cap_c": 1.0, "hash_bits": 256}, "difficulties": [1], "samples": 3});
    let (status, body) = post("/bench-puzzle", req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["rows"][0]["samples"], 3);
}
