//! Read-only JSON API over loaded runs.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::manifest::{query_ipcp, IpcpResponse, LoadedRun};

#[derive(Debug)]
pub struct AppState {
    runs: BTreeMap<String, LoadedRun>,
}

impl AppState {
    pub fn new(runs: Vec<LoadedRun>) -> Result<Self> {
        if runs.is_empty() {
            return Err(CliError::Usage("the service needs at least one run".into()));
        }
        let mut map = BTreeMap::new();
        for r in runs {
            let id = r.manifest.id.clone();
            if map.insert(id.clone(), r).is_some() {
                return Err(CliError::Usage(format!("two runs share the id `{id}`")));
            }
        }
        Ok(Self { runs: map })
    }

    fn run(&self, id: &str) -> std::result::Result<&LoadedRun, ApiError> {
        self.runs.get(id).ok_or_else(|| ApiError(CliError::NotFound(format!("dataset `{id}`"))))
    }
}

pub struct ApiError(CliError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            CliError::NotFound(_) | CliError::Core(ddtrx_core::Error::UnknownLabel(_)) => StatusCode::NOT_FOUND,
            CliError::Usage(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub treatments: Vec<String>,
    /// Number of posterior trees.
    #[serde(rename = "L")]
    pub l: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapTreeResponse {
    pub newick: String,
    pub log_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResponse {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRequest {
    pub subset: Vec<String>,
}

type Shared = Arc<AppState>;

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn datasets(State(s): State<Shared>) -> Json<Vec<DatasetInfo>> {
    Json(
        s.runs
            .values()
            .map(|r| DatasetInfo { id: r.manifest.id.clone(), treatments: r.trees.labels().to_vec(), l: r.trees.len() })
            .collect(),
    )
}

async fn map_tree(State(s): State<Shared>, Path(id): Path<String>) -> std::result::Result<Json<MapTreeResponse>, ApiError> {
    let m = &s.run(&id)?.summaries.map_tree;
    Ok(Json(MapTreeResponse { newick: m.newick.clone(), log_score: m.log_score }))
}

async fn pairwise(State(s): State<Shared>, Path(id): Path<String>) -> std::result::Result<Json<PairwiseResponse>, ApiError> {
    let sum = &s.run(&id)?.summaries;
    Ok(Json(PairwiseResponse { labels: sum.labels.clone(), matrix: sum.pairwise_ipcp.clone() }))
}

async fn subset_ipcp(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SubsetRequest>,
) -> std::result::Result<Json<IpcpResponse>, ApiError> {
    let run = s.run(&id)?;
    query_ipcp(&run.trees, &req.subset).map(Json).map_err(ApiError)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/datasets", get(datasets))
        .route("/api/datasets/{id}/map-tree", get(map_tree))
        .route("/api/datasets/{id}/pairwise-ipcp", get(pairwise))
        .route("/api/datasets/{id}/ipcp", post(subset_ipcp))
        .with_state(Arc::new(state))
}

/// Serves the API on `addr` until the process stops.
pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
