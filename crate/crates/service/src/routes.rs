use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use lxl_core::atlas::{pairwise_separation, radial_positions, Atlas2D, EmbeddingSet};
use lxl_core::dataset::{class_index, CLASS_NAMES};
use lxl_core::models::argmax;
use lxl_core::LxlError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::state::{AppState, AtlasData, Inner, JobState, JobStatus};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/instances", get(instances))
        .route("/api/instances/:id/image", get(image))
        .route("/api/instances/:id/classification", get(classification))
        .route("/api/instances/:id/explanation", get(get_explanation).post(post_explanation))
        .route("/api/jobs/:job", get(job))
        .route("/api/atlas", get(atlas))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

struct ApiError {
    status: StatusCode,
    message: String,
    stage: Option<lxl_core::Stage>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            stage: None,
        }
    }

    fn unavailable() -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "models are not loaded")
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown instance {id}"))
    }
}

impl From<LxlError> for ApiError {
    fn from(e: LxlError) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            stage: e.stage(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message, "status": self.status.as_u16() });
        if let Some(stage) = self.stage {
            body["stage"] = json!(stage);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn ready(s: &AppState) -> ApiResult<&Inner> {
    if s.inner.models.is_none() {
        return Err(ApiError::unavailable());
    }
    Ok(&s.inner)
}

#[derive(Serialize)]
struct InstanceRecord {
    id: String,
    thumbnail: String,
    label: usize,
    class_name: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
}

async fn instances(State(s): State<AppState>) -> ApiResult<Json<Vec<InstanceRecord>>> {
    let inner = ready(&s)?;
    Ok(Json(
        inner
            .data
            .items()
            .iter()
            .map(|it| InstanceRecord {
                thumbnail: format!("/api/instances/{}/image", it.id),
                label: it.label,
                class_name: CLASS_NAMES[it.label],
                explanation: inner
                    .cache_path(&it.id)
                    .is_file()
                    .then(|| format!("/api/instances/{}/explanation", it.id)),
                id: it.id.clone(),
            })
            .collect(),
    ))
}

async fn image(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let item = s.inner.data.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let png = item.image.to_png()?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Serialize)]
struct Classification {
    id: String,
    scores: Vec<f32>,
    label: usize,
    class_name: &'static str,
    class_names: [&'static str; 8],
}

async fn classification(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Classification>> {
    let inner = ready(&s)?;
    let item = inner.data.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let models = inner.models.as_ref().expect("checked by ready");
    let scores = models.blackbox.classify(&item.image)?;
    let label = argmax(&scores);
    Ok(Json(Classification {
        id,
        scores,
        label,
        class_name: CLASS_NAMES[label],
        class_names: CLASS_NAMES,
    }))
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], Body::from(bytes)).into_response()
}

async fn get_explanation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let inner = ready(&s)?;
    if inner.data.get(&id).is_none() {
        return Err(ApiError::not_found(&id));
    }
    match inner.cached(&id) {
        Some(bytes) => Ok(json_bytes(bytes)),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no explanation for {id} yet; POST to this path to compute it"),
        )),
    }
}

async fn post_explanation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let inner = ready(&s)?;
    if inner.data.get(&id).is_none() {
        return Err(ApiError::not_found(&id));
    }
    let status = {
        let mut jobs = inner.jobs.lock().expect("job table lock");
        if let Some(active) = jobs.active.get(&id) {
            let running = jobs.by_id[active].clone();
            drop(jobs);
            return Ok((StatusCode::CONFLICT, Json(json!({
                "error": format!("an explanation job for {id} is already running"),
                "status": 409,
                "job": running.job,
            })))
            .into_response());
        }
        jobs.next += 1;
        let job = format!("job-{}", jobs.next);
        let cached = inner.cache_path(&id).is_file();
        let status = JobStatus {
            job: job.clone(),
            instance: id.clone(),
            state: if cached { JobState::Done } else { JobState::Queued },
            progress: if cached { 1.0 } else { 0.0 },
            error: None,
            stage: None,
        };
        jobs.by_id.insert(job.clone(), status.clone());
        if !cached {
            jobs.active.insert(id.clone(), job);
        }
        status
    };
    if status.state == JobState::Done {
        return Ok((StatusCode::OK, Json(status)).into_response());
    }
    let state = s.clone();
    let job = status.job.clone();
    tokio::task::spawn_blocking(move || run_job(&state.inner, &id, &job));
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

fn run_job(inner: &Inner, id: &str, job: &str) {
    let update = |f: &dyn Fn(&mut JobStatus)| {
        let mut jobs = inner.jobs.lock().expect("job table lock");
        if let Some(s) = jobs.by_id.get_mut(job) {
            f(s);
        }
    };
    update(&|s| s.advance(JobState::Running, 0.0));
    let result = inner.compute(id);
    let mut jobs = inner.jobs.lock().expect("job table lock");
    if let Some(s) = jobs.by_id.get_mut(job) {
        match &result {
            Ok(_) => s.advance(JobState::Done, 1.0),
            Err(e) => {
                log::warn!("explanation of {id} failed: {e}");
                s.advance(JobState::Failed, s.progress);
                s.error = Some(e.to_string());
                s.stage = e.stage();
            }
        }
    }
    jobs.active.remove(id);
}

async fn job(State(s): State<AppState>, Path(job): Path<String>) -> ApiResult<Json<JobStatus>> {
    let jobs = s.inner.jobs.lock().expect("job table lock");
    jobs.by_id
        .get(&job)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {job}")))
}

#[derive(Deserialize)]
struct AtlasQuery {
    #[serde(rename = "classA")]
    class_a: Option<String>,
    #[serde(rename = "classB")]
    class_b: Option<String>,
}

async fn atlas_data(s: &AppState) -> ApiResult<Arc<AtlasData>> {
    let inner = ready(s)?;
    let state = s.clone();
    inner
        .atlas
        .get_or_try_init(|| async move {
            tokio::task::spawn_blocking(move || -> lxl_core::Result<Arc<AtlasData>> {
                let inner = &state.inner;
                let aae = &inner.models.as_ref().expect("checked by ready").aae;
                let embeddings = EmbeddingSet::encode(aae, &inner.data)?;
                let atlas = if embeddings.len() >= 2 {
                    Atlas2D::from_embeddings(&embeddings, &inner.atlas_config.mds)?
                } else {
                    Atlas2D {
                        ids: embeddings.ids().to_vec(),
                        labels: embeddings.labels().to_vec(),
                        coords: vec![[0.0, 0.0]; embeddings.len()],
                        stress: 0.0,
                        stress_log: vec![0.0],
                    }
                };
                Ok(Arc::new(AtlasData { embeddings, atlas }))
            })
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("atlas task: {e}")))?
            .map_err(ApiError::from)
        })
        .await
        .cloned()
}

async fn atlas(State(s): State<AppState>, Query(q): Query<AtlasQuery>) -> ApiResult<Response> {
    let pair = match (&q.class_a, &q.class_b) {
        (None, None) => None,
        (Some(a), Some(b)) => {
            let find = |n: &str| {
                class_index(n).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown class name {n}")))
            };
            Some((find(a)?, find(b)?))
        }
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "classA and classB must be given together")),
    };
    let data = atlas_data(&s).await?;
    let radial: BTreeMap<&str, f64> = radial_positions(&data.atlas).into_iter().map(|(l, r)| (CLASS_NAMES[l], r)).collect();
    let mut body = json!({
        "schema": "atlas/1",
        "atlas": data.atlas,
        "class_names": CLASS_NAMES,
        "radial": radial,
    });
    if let Some((a, b)) = pair {
        let config = s.inner.atlas_config;
        let d = data.clone();
        let report = tokio::task::spawn_blocking(move || pairwise_separation(&d.embeddings, a, b, &config))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("separation task: {e}")))?
            .map_err(|e| match e {
                LxlError::Validation(m) => ApiError::new(StatusCode::BAD_REQUEST, m),
                other => other.into(),
            })?;
        body["separation"] = serde_json::to_value(report).map_err(LxlError::from)?;
    }
    Ok(Json(body).into_response())
}
