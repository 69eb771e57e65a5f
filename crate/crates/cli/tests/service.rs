use std::collections::BTreeMap;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use ddtrx_cli::commands::cmd_summarize;
use ddtrx_cli::manifest::{register, summarize_trees, write_json, write_trees, ParamSummary, SUMMARIES_FILE, TREES_FILE};
use ddtrx_cli::service::{router, AppState};
use ddtrx_cli::{LoadedRun, RunConfig, RunManifest};
use ddtrx_core::tree::build::{from_shape, leaf, split};
use ddtrx_core::{PosteriorTreeSet, Tree};
use serde_json::{json, Value};
use tower::ServiceExt;

fn write_fixture(dir: &std::path::Path, id: &str, trees: Vec<Tree>) -> LoadedRun {
    let ts = PosteriorTreeSet::from_trees(trees).unwrap();
    let trees_path = dir.join(TREES_FILE);
    let sum_path = dir.join(SUMMARIES_FILE);
    write_trees(&trees_path, ts.samples()).unwrap();
    write_json(&sum_path, &summarize_trees(&ts).unwrap()).unwrap();
    let mut artifacts = BTreeMap::new();
    register(&mut artifacts, dir, "trees", &trees_path).unwrap();
    register(&mut artifacts, dir, "summaries", &sum_path).unwrap();
    let p = ParamSummary { median: 1.0, lower: 0.5, upper: 2.0, ess: 10.0, accepted: 10 };
    let m = RunManifest {
        id: id.into(),
        created_unix: 0,
        config: RunConfig::default(),
        labels: ts.labels().to_vec(),
        n_patients: 3,
        c: p.clone(),
        sigma2: p,
        diagnostics: vec![],
        artifacts,
    };
    m.save(dir).unwrap();
    LoadedRun::load(dir).unwrap()
}

fn single() -> Tree {
    from_shape(split(0.3, split(0.6, leaf("a"), leaf("b")), leaf("c"))).unwrap()
}

fn fixtures() -> (tempfile::TempDir, tempfile::TempDir, Vec<LoadedRun>) {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let r1 = write_fixture(d1.path(), "one", vec![single()]);
    let other = from_shape(split(0.2, split(0.5, leaf("a"), leaf("c")), leaf("b"))).unwrap();
    let r2 = write_fixture(d2.path(), "three", vec![single(), other, single()]);
    (d1, d2, vec![r1, r2])
}

async fn call(app: axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

#[tokio::test]
async fn health_and_listing() {
    let (_a, _b, runs) = fixtures();
    let app = router(AppState::new(runs).unwrap());
    let (s, v) = call(app.clone(), get("/api/health")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({ "status": "ok" }));
    let (s, v) = call(app, get("/api/datasets")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        v,
        json!([
            { "id": "one", "treatments": ["a", "b", "c"], "L": 1 },
            { "id": "three", "treatments": ["a", "b", "c"], "L": 3 },
        ])
    );
}

#[tokio::test]
async fn single_tree_ipcp_is_the_divergence_time() {
    let (_a, _b, runs) = fixtures();
    let app = router(AppState::new(runs).unwrap());
    let (s, v) = call(app.clone(), post("/api/datasets/one/ipcp", json!({ "subset": ["a", "b"] }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["ipcp"], json!(0.6));
    assert_eq!(v["pcp"], json!([[0.0, 1.0], [0.6, 0.0]]));
    let (_, v) = call(app, post("/api/datasets/one/ipcp", json!({ "subset": ["a", "b", "c"] }))).await;
    assert_eq!(v["ipcp"], json!(0.3));
}

#[tokio::test]
async fn map_tree_and_pairwise_match_summaries() {
    let (_a, _b, runs) = fixtures();
    let expected = runs[1].summaries.clone();
    let app = router(AppState::new(runs).unwrap());
    let (s, v) = call(app.clone(), get("/api/datasets/three/map-tree")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["newick"], json!(expected.map_tree.newick));
    assert_eq!(v["log_score"], json!(0.0));
    let (s, v) = call(app, get("/api/datasets/three/pairwise-ipcp")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["labels"], json!(["a", "b", "c"]));
    assert_eq!(v["matrix"], json!(expected.pairwise_ipcp));
}

#[tokio::test]
async fn responses_equal_offline_summaries() {
    let (_a, _b, runs) = fixtures();
    let subset = vec!["a".to_string(), "c".to_string()];
    let offline = cmd_summarize(&runs[1], &subset).unwrap().query.unwrap();
    let app = router(AppState::new(runs).unwrap());
    let (_, v) = call(app, post("/api/datasets/three/ipcp", json!({ "subset": subset }))).await;
    assert_eq!(v, serde_json::to_value(&offline).unwrap());
}

#[tokio::test]
async fn error_statuses() {
    let (_a, _b, runs) = fixtures();
    let app = router(AppState::new(runs).unwrap());
    let cases = [
        (get("/api/datasets/nope/map-tree"), StatusCode::NOT_FOUND),
        (get("/api/datasets/nope/pairwise-ipcp"), StatusCode::NOT_FOUND),
        (post("/api/datasets/nope/ipcp", json!({ "subset": ["a", "b"] })), StatusCode::NOT_FOUND),
        (post("/api/datasets/one/ipcp", json!({ "subset": ["a", "zz"] })), StatusCode::NOT_FOUND),
        (post("/api/datasets/one/ipcp", json!({ "subset": ["a"] })), StatusCode::BAD_REQUEST),
        (post("/api/datasets/one/ipcp", json!({ "subset": [] })), StatusCode::BAD_REQUEST),
        (post("/api/datasets/one/ipcp", json!({ "subset": ["a", "a"] })), StatusCode::BAD_REQUEST),
    ];
    for (req, want) in cases {
        let (s, v) = call(app.clone(), req).await;
        assert_eq!(s, want);
        assert!(v["error"].is_string());
    }
    let (s, _) = call(app.clone(), post("/api/datasets/one/ipcp", json!({ "labels": ["a", "b"] }))).await;
    assert!(s.is_client_error());
    let (s, _) = call(app, get("/api/unknown")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[test]
fn state_requires_distinct_runs() {
    assert!(AppState::new(vec![]).is_err());
    let (_a, _b, runs) = fixtures();
    let dup = vec![runs[0].clone(), runs[0].clone()];
    assert!(AppState::new(dup).is_err());
}
