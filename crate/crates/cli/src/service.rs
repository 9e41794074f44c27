//! Read-only HTTP/JSON API over the artifacts of one or more runs.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{ensure, Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use learngraph::analysis::{AnalysisError, Projection};
use learngraph::graphs::GraphCorpus;
use learngraph::{CohortQuery, CurriculumGraph, EmbeddingStore, LearningGraph, StudentAggregate, StudentId};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use crate::commands::{self, to_pretty_json, RunDir};

pub const DEFAULT_NEIGHBORS_K: usize = 10;
pub const DEFAULT_COHORT_K: usize = 5;
pub const DEFAULT_OUTLIERS_K: usize = 10;

/// Immutable artifacts of one run (one topic).
#[derive(Debug)]
pub struct RunSnapshot {
    pub curriculum: CurriculumGraph,
    pub graphs: BTreeMap<StudentId, LearningGraph>,
    pub aggregates: Vec<StudentAggregate>,
    pub store: EmbeddingStore,
    pub projection: Projection,
}

impl RunSnapshot {
    /// Loads a run directory and checks that all artifacts describe the same
    /// topic and the same students.
    pub fn load(dir: &Path) -> Result<Self> {
        let run = RunDir::new(dir);
        let curriculum = commands::load_curriculum(&run.curriculum())?;
        let corpus: GraphCorpus = commands::load_corpus(&run.graphs())?;
        let aggregates: Vec<StudentAggregate> = read_json(&run.aggregates())?;
        let store = commands::load_store(&run.embeddings())?;
        let projection: Projection = read_json(&run.projection())?;
        let snapshot = RunSnapshot {
            graphs: corpus.graphs.iter().map(|g| (g.student.clone(), g.clone())).collect(),
            curriculum,
            aggregates,
            store,
            projection,
        };
        snapshot.check(&corpus).with_context(|| format!("inconsistent run snapshot in {}", dir.display()))?;
        Ok(snapshot)
    }

    fn check(&self, corpus: &GraphCorpus) -> Result<()> {
        let topic = self.curriculum.topic();
        for (what, other) in [
            ("graphs", corpus.topic.as_str()),
            ("embeddings", self.store.topic()),
            ("projection", self.projection.topic.as_str()),
        ] {
            ensure!(other == topic, "{what} are for topic `{other}`, curriculum is `{topic}`");
        }
        ensure!(
            corpus.graphs.iter().all(|g| g.topic == topic),
            "a learning graph belongs to another topic"
        );
        let graph_ids: Vec<&StudentId> = corpus.graphs.iter().map(|g| &g.student).collect();
        let store_ids: Vec<&StudentId> = self.store.ids().iter().collect();
        let projection_ids: Vec<&StudentId> = self.projection.points.iter().map(|p| &p.student).collect();
        let aggregate_ids: Vec<&StudentId> = self.aggregates.iter().map(|a| &a.student).collect();
        ensure!(graph_ids == store_ids, "embedding store and learning graphs cover different students");
        ensure!(projection_ids == store_ids, "projection and embedding store cover different students");
        ensure!(aggregate_ids == store_ids, "aggregates and embedding store cover different students");
        Ok(())
    }

    pub fn topic(&self) -> &str {
        self.curriculum.topic()
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

/// All loaded runs, keyed by topic.
#[derive(Debug, Default)]
pub struct Snapshots {
    runs: BTreeMap<String, RunSnapshot>,
}

impl Snapshots {
    pub fn load(dirs: &[PathBuf]) -> Result<Self> {
        let mut runs = BTreeMap::new();
        for dir in dirs {
            let snap = RunSnapshot::load(dir)?;
            let topic = snap.topic().to_owned();
            ensure!(!runs.contains_key(&topic), "topic `{topic}` is served by more than one run directory");
            runs.insert(topic, snap);
        }
        ensure!(!runs.is_empty(), "no run directories given");
        Ok(Snapshots { runs })
    }

    pub fn from_runs(runs: impl IntoIterator<Item = RunSnapshot>) -> Self {
        Snapshots {
            runs: runs.into_iter().map(|r| (r.topic().to_owned(), r)).collect(),
        }
    }

    /// The run for `topic`, or the only run when no topic is given.
    fn select(&self, topic: Option<&str>) -> Result<&RunSnapshot, ApiError> {
        match topic {
            Some(t) => self.runs.get(t).ok_or_else(|| ApiError::not_found(format!("unknown topic `{t}`"))),
            None if self.runs.len() == 1 => Ok(self.runs.values().next().expect("one run")),
            None => Err(ApiError::bad_request("several topics are served; pass `topic`")),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::UnknownStudent(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = to_pretty_json(&ErrorBody { error: &self.message });
        (self.status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
    }
}

fn json<T: Serialize>(value: &T) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], to_pretty_json(value)).into_response()
}

type Params = Query<HashMap<String, String>>;
type AppState = State<Arc<Snapshots>>;

fn param_k(params: &HashMap<String, String>, default: usize) -> Result<usize, ApiError> {
    match params.get("k") {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| ApiError::bad_request(format!("`k` must be a positive integer, got `{raw}`"))),
    }
}

fn topic(params: &HashMap<String, String>) -> Option<&str> {
    params.get("topic").map(String::as_str)
}

#[derive(Serialize)]
struct TopicSummary<'a> {
    topic: &'a str,
    concepts: usize,
    students: usize,
    embed_dim: usize,
}

async fn topics(State(s): AppState) -> Response {
    let list: Vec<TopicSummary> = s
        .runs
        .values()
        .map(|r| TopicSummary {
            topic: r.topic(),
            concepts: r.curriculum.len(),
            students: r.store.len(),
            embed_dim: r.store.dim(),
        })
        .collect();
    json(&list)
}

async fn students(State(s): AppState, Query(p): Params) -> Result<Response, ApiError> {
    Ok(json(&s.select(topic(&p))?.aggregates))
}

async fn student_graph(State(s): AppState, UrlPath(id): UrlPath<String>, Query(p): Params) -> Result<Response, ApiError> {
    let run = s.select(topic(&p))?;
    let graph = run
        .graphs
        .get(&StudentId::from(id.as_str()))
        .ok_or_else(|| ApiError::not_found(format!("unknown student `{id}`")))?;
    Ok(json(graph))
}

async fn student_aggregate(State(s): AppState, UrlPath(id): UrlPath<String>, Query(p): Params) -> Result<Response, ApiError> {
    let run = s.select(topic(&p))?;
    let agg = run
        .aggregates
        .iter()
        .find(|a| a.student.as_str() == id)
        .ok_or_else(|| ApiError::not_found(format!("unknown student `{id}`")))?;
    Ok(json(agg))
}

async fn projection(State(s): AppState, Query(p): Params) -> Result<Response, ApiError> {
    Ok(json(&s.select(topic(&p))?.projection))
}

async fn neighbors(State(s): AppState, Query(p): Params) -> Result<Response, ApiError> {
    let run = s.select(topic(&p))?;
    let student = p.get("student").ok_or_else(|| ApiError::bad_request("missing `student`"))?;
    let k = param_k(&p, DEFAULT_NEIGHBORS_K)?;
    Ok(json(&run.store.neighbors_report(&StudentId::from(student.as_str()), k)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CohortBody {
    start: StudentId,
    end: StudentId,
    #[serde(default = "default_cohort_k")]
    k: usize,
    topic: Option<String>,
}

fn default_cohort_k() -> usize {
    DEFAULT_COHORT_K
}

async fn cohort(State(s): AppState, body: Bytes) -> Result<Response, ApiError> {
    let body: CohortBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid cohort request: {e}")))?;
    let run = s.select(body.topic.as_deref())?;
    let query = CohortQuery {
        start: body.start,
        end: body.end,
        k: body.k,
    };
    Ok(json(&run.store.cohort_report(&query)?))
}

async fn outliers(State(s): AppState, Query(p): Params) -> Result<Response, ApiError> {
    let run = s.select(topic(&p))?;
    let k = param_k(&p, DEFAULT_OUTLIERS_K)?;
    Ok(json(&run.store.outliers_report(k)?))
}

/// Default origins of the explorer development server.
pub const DEFAULT_CORS_ORIGINS: [&str; 2] = ["http://localhost:5173", "http://127.0.0.1:5173"];

pub fn router(snapshots: Arc<Snapshots>, cors_origins: &[String], static_dir: Option<&Path>) -> Result<Router> {
    let origins = cors_origins
        .iter()
        .map(|o| HeaderValue::from_str(o).with_context(|| format!("invalid CORS origin `{o}`")))
        .collect::<Result<Vec<_>>>()?;
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/topics", get(topics))
        .route("/students", get(students))
        .route("/students/{id}/graph", get(student_graph))
        .route("/students/{id}/aggregate", get(student_aggregate))
        .route("/projection", get(projection))
        .route("/neighbors", get(neighbors))
        .route("/cohort", post(cohort))
        .route("/outliers", get(outliers))
        .with_state(snapshots);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    Ok(app.layer(cors))
}

pub async fn serve(snapshots: Snapshots, host: &str, port: u16, cors_origins: &[String], static_dir: Option<&Path>) -> Result<()> {
    let app = router(Arc::new(snapshots), cors_origins, static_dir)?;
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("cannot bind {host}:{port}"))?;
    log::info!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
