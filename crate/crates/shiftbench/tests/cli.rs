use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use shiftbench::http::router;
use shiftbench::RunStore;
use std::path::Path;
use std::process::{Command, Output};
use tower::ServiceExt;

fn shiftbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftbench")).args(args).output().unwrap()
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

async fn post(uri: &str, body: Value) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let app = router(RunStore::open(dir.path()).unwrap());
    let req = Request::builder().method("POST").uri(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap()
}

const MODEL: &str = r#"{
  "schema_version": 1,
  "variables": [
    {"name": "Z", "family": {"kind": "bernoulli_logit"}, "eta": {"form": "constant", "eta": [0.2]}},
    {"name": "W", "family": {"kind": "bernoulli_logit"}, "parents": ["Z"], "eta": {"form": "table", "table": [[-0.5], [0.5]]}}
  ],
  "interventions": [{"variable": "W", "shift": {"form": "per_stratum"}}]
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[tokio::test]
async fn cli_and_http_estimates_agree() {
    let cli = json_stdout(&shiftbench(&["estimate", "--scenario", "labtest_age", "--n", "3000", "--seed", "7", "--format", "json"]));
    let http = post("/v1/estimate", json!({"scenario": "labtest_age", "n": 3000, "seed": 7})).await;
    assert_eq!(cli["run_id"], http["run_id"]);
    assert_eq!(cli["config"], http["config"]);
    assert_eq!(cli["result"], http["result"]);
}

#[tokio::test]
async fn cli_and_http_worst_cases_agree() {
    let cli = json_stdout(&shiftbench(&["worst-case", "--scenario", "labtest_small", "--n", "2000", "--seed", "4", "--lambda", "1.5", "--format", "json"]));
    let http = post("/v1/worst-case", json!({"source": {"scenario": "labtest_small", "n": 2000, "seed": 4}, "constraint": {"form": "ball", "lambda": 1.5}})).await;
    assert_eq!(cli["run_id"], http["run_id"]);
    assert_eq!(cli["result"], http["result"]);
}

#[test]
fn repeated_runs_share_an_id_and_result() {
    let args = ["estimate", "--scenario", "gauss1d", "--n", "500", "--seed", "2", "--format", "json"];
    let a = json_stdout(&shiftbench(&args));
    let b = json_stdout(&shiftbench(&args));
    assert_eq!(a["run_id"], b["run_id"]);
    assert_eq!(a["result"], b["result"]);
    let c = json_stdout(&shiftbench(&["estimate", "--scenario", "gauss1d", "--n", "500", "--seed", "3", "--format", "json"]));
    assert_ne!(a["run_id"], c["run_id"]);
}

#[test]
fn estimate_from_files_and_worst_case_from_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", MODEL);
    let mut csv = String::from("Z,W,__loss\n");
    for i in 0..200 {
        let (z, w) = (i % 2, (i / 3) % 2);
        csv.push_str(&format!("{z},{w},{}\n", (z + w) as f64 * 0.25 + (i % 7) as f64 * 0.01));
    }
    let data = write(dir.path(), "data.csv", &csv);
    let record = dir.path().join("est.json");
    let runs = dir.path().join("runs");
    let out = shiftbench(&["estimate", "--config", &model, "--data", &data, "--out", record.to_str().unwrap(), "--runs", runs.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("W | Z=0") && text.contains("W | Z=1"), "{text}");
    assert_eq!(std::fs::read_dir(&runs.join("runs")).unwrap().count(), 1);

    let out = shiftbench(&["worst-case", "--estimate", record.to_str().unwrap(), "--lambda", "1", "--format", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("label,delta,p,p_delta"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 2);
    let p: f64 = rows[0][2].parse().unwrap();
    assert!((p - 1.0 / (1.0 + 0.5f64.exp())).abs() < 1e-12);
}

#[test]
fn constant_loss_column_gives_a_zero_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", MODEL);
    let mut csv = String::from("Z,W,__loss\n");
    for i in 0..64 {
        csv.push_str(&format!("{},{},0.5\n", i % 2, (i / 2) % 2));
    }
    let data = write(dir.path(), "data.csv", &csv);
    let run = json_stdout(&shiftbench(&["estimate", "--config", &model, "--data", &data, "--format", "json"]));
    assert_eq!(run["result"]["base_loss"], json!(0.5));
    assert!(run["result"]["sg1"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
}

#[test]
fn malformed_csv_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "model.json", MODEL);
    let data = write(dir.path(), "data.csv", "Z,W,__loss\n0,1,0.2\n1,oops,0.3\n");
    let out = shiftbench(&["estimate", "--config", &model, "--data", &data]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2"), "{err}");
    assert!(err.contains("/data_csv"), "{err}");
}

#[test]
fn zero_radius_is_a_domain_error() {
    let out = shiftbench(&["worst-case", "--scenario", "gauss1d", "--n", "100", "--lambda", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/constraint"), "{err}");
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let req = write(
        dir.path(),
        "sweep.json",
        &json!({"source": {"scenario": "gauss1d", "n": 2000, "seed": 1}, "coords": [0], "lower": [-1.0], "upper": [1.0], "steps": [3], "truth": {"n": 1000, "seed": 2}}).to_string(),
    );
    let out = shiftbench(&["sweep", "--request", &req, "--format", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().ends_with("taylor,truth,truth_se,gap"));
}

#[test]
fn simulate_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "exp.json",
        &json!({"scenario": "gauss1d", "deltas": [[0.0], [0.5]], "reps": 20, "n": 200, "seed": 1}).to_string(),
    );
    let plots = dir.path().join("plots");
    let out = shiftbench(&["simulate", "--experiment", "is-vs-taylor", "--config", &config, "--plot-data", plots.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(plots.join("is_vs_taylor.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
