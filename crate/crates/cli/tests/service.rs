mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use learngraph::analysis::Projection;
use learngraph::{EmbeddingStore, LearningGraph, StudentAggregate};
use learngraph_cli::service::{self, RunSnapshot, Snapshots};
use serde_json::Value;
use tower::ServiceExt;

fn app(dir: &std::path::Path) -> Router {
    let snapshots = Snapshots::load(&[dir.to_path_buf()]).unwrap();
    service::router(Arc::new(snapshots), &["http://explorer.test".to_string()], None).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, String) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let body = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(body.to_vec()).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, String) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn cohort_request(body: &str) -> Request<Body> {
    Request::post("/cohort")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap()
}

#[tokio::test]
async fn endpoints_return_snapshot_contents() {
    let dir = tempfile::tempdir().unwrap();
    let run = common::fixture_run(dir.path(), 24);
    let app = app(dir.path());
    let store = EmbeddingStore::load(run.embeddings()).unwrap();
    let first = store.ids()[0].as_str().to_owned();

    let (status, body) = get(&app, "/topics").await;
    assert_eq!(status, StatusCode::OK);
    let topics: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(topics[0]["topic"], "synthetic");
    assert_eq!(topics[0]["students"], store.len());
    assert_eq!(topics[0]["embed_dim"], 24);

    let (status, body) = get(&app, "/students?topic=synthetic").await;
    assert_eq!(status, StatusCode::OK);
    let aggregates: Vec<StudentAggregate> = serde_json::from_str(&body).unwrap();
    assert_eq!(aggregates.len(), store.len());

    let (status, body) = get(&app, &format!("/students/{first}/graph")).await;
    assert_eq!(status, StatusCode::OK);
    let graph: LearningGraph = serde_json::from_str(&body).unwrap();
    assert_eq!(graph.student.as_str(), first);
    assert!(graph.nodes.iter().all(|n| n.scaled.len() == 3));

    let (status, body) = get(&app, &format!("/students/{first}/aggregate")).await;
    assert_eq!(status, StatusCode::OK);
    let agg: StudentAggregate = serde_json::from_str(&body).unwrap();
    assert_eq!(agg, aggregates[0]);

    let (status, body) = get(&app, "/projection").await;
    assert_eq!(status, StatusCode::OK);
    let projection: Projection = serde_json::from_str(&body).unwrap();
    assert_eq!(projection.points.len(), store.len());
    assert!(projection.points.iter().all(|p| p.coords.len() == 3));
    assert_eq!(body, std::fs::read_to_string(run.projection()).unwrap());
}

#[tokio::test]
async fn errors_use_status_codes_and_json_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let run = common::fixture_run(dir.path(), 12);
    let app = app(dir.path());
    let store = EmbeddingStore::load(run.embeddings()).unwrap();
    let a = store.ids()[0].as_str().to_owned();

    let cases = [
        ("/neighbors?student=nobody&k=2", StatusCode::NOT_FOUND),
        (&format!("/neighbors?student={a}&k=500") as &str, StatusCode::BAD_REQUEST),
        (&format!("/neighbors?student={a}&k=two"), StatusCode::BAD_REQUEST),
        ("/neighbors?k=2", StatusCode::BAD_REQUEST),
        ("/students/nobody/graph", StatusCode::NOT_FOUND),
        ("/students/nobody/aggregate", StatusCode::NOT_FOUND),
        ("/projection?topic=other", StatusCode::NOT_FOUND),
        ("/outliers?k=0", StatusCode::BAD_REQUEST),
    ];
    for (uri, want) in cases {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, want, "{uri}");
        let v: Value = serde_json::from_str(&body).unwrap();
        assert!(v["error"].is_string(), "{uri}: {body}");
    }

    let (status, _) = send(&app, cohort_request(&format!(r#"{{"start":"{a}","end":"{a}","k":1}}"#))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, cohort_request(r#"{"start":"nobody","end":"x","k":1}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, cohort_request("not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn repeated_requests_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = common::fixture_run(dir.path(), 12);
    let app = app(dir.path());
    let store = EmbeddingStore::load(run.embeddings()).unwrap();
    let (a, b) = (store.ids()[0].as_str(), store.ids()[1].as_str());
    for uri in [format!("/neighbors?student={a}&k=3"), "/outliers?k=2".into(), "/projection".into()] {
        assert_eq!(get(&app, &uri).await, get(&app, &uri).await);
    }
    let body = format!(r#"{{"start":"{a}","end":"{b}","k":2}}"#);
    let (s1, r1) = send(&app, cohort_request(&body)).await;
    let (s2, r2) = send(&app, cohort_request(&body)).await;
    assert_eq!((s1, &r1), (StatusCode::OK, &r2));
    assert_eq!(s2, StatusCode::OK);
    let report: Value = serde_json::from_str(&r1).unwrap();
    let members = report["members"].as_array().unwrap();
    assert_eq!(members.len(), 4);
    assert_eq!(members[0]["role"], "start");
    assert_eq!(members[3]["role"], "end");
}

#[tokio::test]
async fn cors_allows_configured_origin_only() {
    let dir = tempfile::tempdir().unwrap();
    common::fixture_run(dir.path(), 8);
    let app = app(dir.path());
    let req = |origin: &str| Request::get("/topics").header(header::ORIGIN, origin).body(Body::empty()).unwrap();
    let allowed = app.clone().oneshot(req("http://explorer.test")).await.unwrap();
    assert_eq!(allowed.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://explorer.test");
    let other = app.clone().oneshot(req("http://elsewhere.test")).await.unwrap();
    assert!(other.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[tokio::test]
async fn serves_static_assets() {
    let dir = tempfile::tempdir().unwrap();
    common::fixture_run(dir.path(), 8);
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<h1>explorer</h1>").unwrap();
    let snapshots = Snapshots::load(&[dir.path().to_path_buf()]).unwrap();
    let app = service::router(Arc::new(snapshots), &[], Some(assets.path())).unwrap();
    let (status, body) = get(&app, "/index.html").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "<h1>explorer</h1>");
    assert_eq!(get(&app, "/topics").await.0, StatusCode::OK);
}

#[test]
fn refuses_inconsistent_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let run = common::fixture_run(dir.path(), 10);

    // Projection missing a student.
    let original = std::fs::read_to_string(run.projection()).unwrap();
    let mut projection: Projection = serde_json::from_str(&original).unwrap();
    projection.points.pop();
    std::fs::write(run.projection(), serde_json::to_string(&projection).unwrap()).unwrap();
    let err = RunSnapshot::load(dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains("projection"), "{err:#}");
    std::fs::write(run.projection(), &original).unwrap();
    assert!(RunSnapshot::load(dir.path()).is_ok());

    // Embeddings for another topic.
    let text = std::fs::read_to_string(run.embeddings()).unwrap();
    std::fs::write(run.embeddings(), text.replacen("\"synthetic\"", "\"other\"", 1)).unwrap();
    let err = RunSnapshot::load(dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains("topic"), "{err:#}");

    // Missing artifact.
    std::fs::remove_file(run.aggregates()).unwrap();
    assert!(RunSnapshot::load(dir.path()).is_err());
}

#[test]
fn multiple_topics_require_a_topic_parameter() {
    let a = tempfile::tempdir().unwrap();
    common::fixture_run(a.path(), 8);
    let b = tempfile::tempdir().unwrap();
    common::fixture_run(b.path(), 8);
    let err = Snapshots::load(&[a.path().to_path_buf(), b.path().to_path_buf()]).unwrap_err();
    assert!(err.to_string().contains("more than one"));
}
