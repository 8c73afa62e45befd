//! HTTP/1.1 JSON API.
//!
//! | method | path                     | body                      | response            |
//! |--------|--------------------------|---------------------------|---------------------|
//! | GET    | `/v1/health`             |                           | status              |
//! | GET    | `/v1/model`              |                           | model description   |
//! | POST   | `/v1/infer`              | infer request             | frames, gates       |
//! | POST   | `/v1/extract-keyposes`   | curve file                | schedule            |
//! | POST   | `/v1/eval`               | ground truth, prediction, schedule | metric report |
//! | POST   | `/v1/model/reload`       |                           | model description   |
//!
//! Errors are `{code, message, field?}` with status 400 (malformed), 422
//! (incompatible with the model), 503 (no model) or 500.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use tweenforge::heads::HeadKind;
use tweenforge::inference::{eval_curves, extract_keyposes, infer, parse_request, ErrorClass, EvalRequest, InferRequest, ServiceError};
use tweenforge::io::load_checkpoint;
use tweenforge::model::Model;
use tweenforge::schedule::DbaParams;
use tweenforge::CharacterSpec;

/// Shared server state. The model is an immutable snapshot; reloading swaps
/// the `Arc` under a short write lock, so in-flight requests finish on the
/// snapshot they started with.
#[derive(Clone)]
pub struct AppState {
    model: Arc<RwLock<Option<Arc<Model>>>>,
    model_path: Option<PathBuf>,
}

impl AppState {
    pub fn new(model: Option<Model>, model_path: Option<PathBuf>) -> Self {
        AppState {
            model: Arc::new(RwLock::new(model.map(Arc::new))),
            model_path,
        }
    }

    pub fn snapshot(&self) -> Option<Arc<Model>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn swap(&self, model: Option<Model>) {
        *self.model.write().expect("model lock") = model.map(Arc::new);
    }
}

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.class {
            ErrorClass::BadRequest => StatusCode::BAD_REQUEST,
            ErrorClass::Unprocessable => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model_loaded: bool,
}

#[derive(Serialize)]
pub struct ModelInfo {
    pub spec: CharacterSpec,
    pub spec_hash: String,
    pub head: HeadKind,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub root: Option<String>,
    pub param_count: usize,
    pub seed: u64,
}

fn describe(m: &Model) -> ModelInfo {
    ModelInfo {
        spec: m.spec.clone(),
        spec_hash: m.spec.hash(),
        head: m.config.head,
        hidden_size: m.config.hidden_size,
        num_layers: m.config.num_layers,
        root: m.config.root.clone(),
        param_count: m.param_count(),
        seed: m.seed,
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::new(ErrorClass::Internal, "internal", e.to_string()))?
        .map_err(ApiError)
}

fn loaded(state: &AppState) -> Result<Arc<Model>, ApiError> {
    state.snapshot().ok_or_else(|| ApiError(ServiceError::no_model()))
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        model_loaded: state.snapshot().is_some(),
    })
}

async fn model_info(State(state): State<AppState>) -> ApiResult<ModelInfo> {
    let model = loaded(&state)?;
    Ok(Json(describe(&model)))
}

async fn infer_handler(State(state): State<AppState>, body: Bytes) -> ApiResult<tweenforge::inference::InferResponse> {
    let req: InferRequest = parse_request(&body)?;
    let model = loaded(&state)?;
    blocking(move || infer(&model, &req)).await.map(Json)
}

async fn extract_handler(body: Bytes) -> ApiResult<tweenforge::Schedule> {
    let text = String::from_utf8(body.to_vec())
        .map_err(|e| ServiceError::new(ErrorClass::BadRequest, "bad_request", e.to_string()))?;
    blocking(move || extract_keyposes(&text, &DbaParams::default())).await.map(Json)
}

async fn eval_handler(body: Bytes) -> ApiResult<tweenforge::metrics::MetricReport> {
    let req: EvalRequest = parse_request(&body)?;
    blocking(move || eval_curves(&req)).await.map(Json)
}

async fn reload_handler(State(state): State<AppState>) -> ApiResult<ModelInfo> {
    let Some(path) = state.model_path.clone() else {
        return Err(ApiError(ServiceError::new(
            ErrorClass::BadRequest,
            "no_model_path",
            "server was started without --model",
        )));
    };
    let model = blocking(move || load_checkpoint(&path).map_err(ServiceError::from)).await?;
    let info = describe(&model);
    state.swap(Some(model));
    Ok(Json(info))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/model", get(model_info))
        .route("/v1/model/reload", post(reload_handler))
        .route("/v1/infer", post(infer_handler))
        .route("/v1/extract-keyposes", post(extract_handler))
        .route("/v1/eval", post(eval_handler))
        .with_state(state)
}

pub async fn serve(state: AppState, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
