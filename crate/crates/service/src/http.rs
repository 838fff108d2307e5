//! JSON API over the job store.

use std::collections::BTreeMap;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mapsmith::schema::Correspondence;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::executor::Executor;
use crate::jobs::JobConfig;
use crate::store::{DecisionInput, Verdict};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::InvalidConfig(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownJob(_) | ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Io(_) | ServiceError::Execution(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct SubmitRequest {
    #[serde(default)]
    pub request_key: Option<String>,
    pub config: JobConfig,
}

/// One row of the review table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub pair: Correspondence,
    pub rank: usize,
    pub conf_final: f64,
    pub conf_forward: Option<f64>,
    pub conf_swapped: Option<f64>,
    pub support_forward: usize,
    pub support_swapped: usize,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    pub decision: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub source_relation: String,
    pub target_relation: String,
    pub seed: u64,
    pub scoring: String,
    pub early_stops: usize,
    pub candidates: Vec<CandidateView>,
}

type ApiResult<T> = Result<T, ServiceError>;

pub fn router(executor: Executor) -> Router {
    Router::new()
        .route("/jobs", post(submit).get(list))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/candidates", get(candidates))
        .route("/jobs/{id}/decisions", post(decide).get(decisions))
        .route("/jobs/{id}/export", get(export))
        .route("/jobs/{id}/transcript", get(transcript))
        .with_state(executor)
}

async fn submit(State(ex): State<Executor>, Json(req): Json<SubmitRequest>) -> ApiResult<Response> {
    let (job, created) = ex.submit(req.config, req.request_key)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(job)).into_response())
}

async fn list(State(ex): State<Executor>) -> Response {
    Json(ex.store.list()).into_response()
}

async fn job(State(ex): State<Executor>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(ex.store.get(&id)?).into_response())
}

async fn candidates(State(ex): State<Executor>, Path(id): Path<String>) -> ApiResult<Json<Vec<CandidateGroup>>> {
    let results = ex.store.candidates(&id)?;
    let verdicts = ex.store.verdicts(&id)?;
    let groups = results
        .into_iter()
        .map(|r| {
            let mut rows = Vec::new();
            for list in r.ranked.values() {
                for (i, c) in list.iter().enumerate() {
                    rows.push(CandidateView {
                        pair: c.pair.clone(),
                        rank: i + 1,
                        conf_final: c.conf_final,
                        conf_forward: c.conf_forward,
                        conf_swapped: c.conf_swapped,
                        support_forward: c.support_forward,
                        support_swapped: c.support_swapped,
                        method: c.method.clone(),
                        round: c.round,
                        decision: verdicts.get(&c.pair).cloned(),
                    });
                }
            }
            CandidateGroup {
                source_relation: r.source_relation,
                target_relation: r.target_relation,
                seed: r.provenance.config.seed,
                scoring: r.provenance.scoring,
                early_stops: r.provenance.early_stops.len(),
                candidates: rows,
            }
        })
        .collect();
    Ok(Json(groups))
}

async fn decide(
    State(ex): State<Executor>,
    Path(id): Path<String>,
    Json(input): Json<DecisionInput>,
) -> ApiResult<Response> {
    let decision = ex.store.record_decision(&id, input)?;
    Ok((StatusCode::CREATED, Json(decision)).into_response())
}

async fn decisions(State(ex): State<Executor>, Path(id): Path<String>) -> ApiResult<Response> {
    let all = ex.store.decisions(&id)?;
    let current: BTreeMap<String, Verdict> = ex
        .store
        .verdicts(&id)?
        .into_iter()
        .map(|(p, v)| (p.to_string(), v))
        .collect();
    Ok(Json(serde_json::json!({ "log": all, "current": current })).into_response())
}

async fn export(State(ex): State<Executor>, Path(id): Path<String>) -> ApiResult<Response> {
    let doc = ex.store.export(&id)?;
    Ok(([("content-type", "application/json")], doc.to_json()).into_response())
}

async fn transcript(State(ex): State<Executor>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(ex.store.transcript(&id)?).into_response())
}
