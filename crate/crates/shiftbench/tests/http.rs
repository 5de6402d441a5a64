use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use shiftbench::http::router;
use shiftbench::RunStore;
use tower::ServiceExt;

fn app() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    (dir, router(store))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn source() -> Value {
    json!({"scenario": "labtest_small", "n": 4000, "seed": 11})
}

#[tokio::test]
async fn negative_radius_is_rejected_with_a_pointer() {
    let (_dir, app) = app();
    let (status, body) = call(&app, "POST", "/v1/worst-case", Some(json!({"source": source(), "constraint": {"form": "ball", "lambda": -1.0}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["pointer"], "/constraint");
    assert!(body["error"].as_str().unwrap().contains("λ") || body["error"].as_str().unwrap().contains("lambda"));
}

#[tokio::test]
async fn malformed_fields_report_their_location() {
    let (_dir, app) = app();
    let (status, body) = call(&app, "POST", "/v1/estimate", Some(json!({"scenario": "labtest_small", "n": "many"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["pointer"], "/n");
    let (status, body) = call(&app, "POST", "/v1/estimate", Some(json!({"scenario": "nowhere"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["pointer"], "/scenario");
}

#[tokio::test]
async fn ball_worst_case_reports_kkt_residual() {
    let (_dir, app) = app();
    let (status, body) = call(&app, "POST", "/v1/worst-case", Some(json!({"source": source(), "constraint": {"form": "ball", "lambda": 2.0}}))).await;
    assert_eq!(status, StatusCode::OK);
    let tr = &body["result"]["trust_region"];
    assert!(tr["kkt_residual"].as_f64().unwrap() < 1e-8);
    let norm: f64 = tr["delta_star"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap().powi(2)).sum::<f64>().sqrt();
    assert!(norm <= 2.0 + 1e-9);
    assert!(tr["predicted_loss"].as_f64().unwrap() >= body["result"]["estimate"]["base_loss"].as_f64().unwrap());

    let id = body["run_id"].as_str().unwrap().to_string();
    let (status, stored) = call(&app, "GET", &format!("/v1/runs/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stored, body);
    let (_, runs) = call(&app, "GET", "/v1/runs", None).await;
    assert_eq!(runs["runs"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn tightening_a_box_never_raises_the_worst_case() {
    let (_dir, app) = app();
    let (_, est) = call(&app, "POST", "/v1/estimate", Some(source())).await;
    let run = est["run_id"].as_str().unwrap().to_string();
    let mut last = f64::INFINITY;
    for w in [2.0, 1.5, 1.0, 0.5, 0.25, 0.0] {
        let req = json!({"estimate_run": run, "constraint": {"form": "box", "lower": [-w, -w], "upper": [w, w]}});
        let (status, body) = call(&app, "POST", "/v1/worst-case", Some(req)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let loss = body["result"]["trust_region"]["predicted_loss"].as_f64().unwrap();
        assert!(loss <= last + 1e-12, "box half-width {w}: {loss} > {last}");
        last = loss;
    }
    assert_eq!(last, est["result"]["base_loss"].as_f64().unwrap());
}

#[tokio::test]
async fn estimate_run_references_resolve_to_their_source() {
    let (_dir, app) = app();
    let (_, est) = call(&app, "POST", "/v1/estimate", Some(source())).await;
    let constraint = json!({"form": "ball", "lambda": 1.0});
    let (_, by_ref) = call(&app, "POST", "/v1/worst-case", Some(json!({"estimate_run": est["run_id"], "constraint": constraint}))).await;
    let (_, inline) = call(&app, "POST", "/v1/worst-case", Some(json!({"source": source(), "constraint": constraint}))).await;
    assert_eq!(by_ref["run_id"], inline["run_id"]);
    assert_eq!(by_ref["result"], inline["result"]);
    let (status, body) = call(&app, "POST", "/v1/worst-case", Some(json!({"estimate_run": "0123456789abcdef", "constraint": constraint}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["pointer"], "/estimate_run");
}

#[tokio::test]
async fn unknown_runs_are_not_found() {
    let (_dir, app) = app();
    let (status, body) = call(&app, "GET", "/v1/runs/ffffffffffffffff", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn model_registration_and_conflicts() {
    let (_dir, app) = app();
    let model = json!({
        "schema_version": 1,
        "variables": [{"name": "X", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.3]}}],
        "interventions": [{"variable": "X", "shift": {"form": "constant"}}]
    });
    let (status, body) = call(&app, "POST", "/v1/models", Some(json!({"id": "coin", "model": model}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["id"], "coin");
    let (status, _) = call(&app, "POST", "/v1/models", Some(json!({"id": "coin", "model": model}))).await;
    assert_eq!(status, StatusCode::OK);
    let mut other = model.clone();
    other["variables"][0]["eta"]["eta"] = json!([0.4]);
    let (status, _) = call(&app, "POST", "/v1/models", Some(json!({"id": "coin", "model": other}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut bad = model.clone();
    bad["variables"][0]["eta"]["eta"] = json!([0.1, 0.2]);
    let (status, body) = call(&app, "POST", "/v1/models", Some(json!({"model": bad}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["pointer"].as_str().unwrap().starts_with("/model/variables/0"), "{body}");

    let (status, listing) = call(&app, "GET", "/v1/models", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(listing["models"], json!(["coin"]));
    assert_eq!(listing["scenarios"].as_array().unwrap().len(), 5);

    let csv = "X,__loss\n1,1\n0,0\n1,1\n1,1\n0,0\n0,1\n1,0\n0,0\n";
    let (status, body) = call(&app, "POST", "/v1/estimate", Some(json!({"model_id": "coin", "data_csv": csv}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["config"]["model"], model);
    assert!(body["config"].get("model_id").is_none());
}

#[tokio::test]
async fn sweep_over_a_scenario() {
    let (_dir, app) = app();
    let req = json!({"source": source(), "coords": [1], "lower": [-1.0], "upper": [1.0], "steps": [5], "truth": {"n": 2000, "seed": 3}});
    let (status, body) = call(&app, "POST", "/v1/sweep", Some(req)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let points = body["result"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 5);
    assert!(points.iter().all(|p| p["truth"].is_number() && p["truth_se"].is_number()));
    let (status, body) = call(&app, "POST", "/v1/sweep", Some(json!({"source": source(), "coords": [1], "lower": [1.0], "upper": [-1.0], "steps": [5]}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["pointer"], "/lower/0");
}
