//! HTTP front end for the three tasks.
//!
//! `POST /v1/synthesize` takes base64 PNGs and returns a base64 PNG;
//! `GET /v1/health` reports readiness. Both answer 503 until a model has
//! been installed with [`AppState::install`], which lets the listener come
//! up while the checkpoint is still loading.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use hairgan::checkpoint::checkpoint_id;
use hairgan::data::{preprocess_sample, SampleRecord};
use hairgan::model::HairGan;
use hairgan::tasks::{self, Synthesizer, TaskKind, DEFAULT_TASK_SEED};
use hairgan::{imageio, Error};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

/// Request bodies carry up to four PNGs.
const BODY_LIMIT: usize = 32 * 1024 * 1024;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    pub task: TaskKind,
    pub source_image: String,
    pub source_mask: String,
    #[serde(default)]
    pub edited_mask: Option<String>,
    #[serde(default)]
    pub reference_image: Option<String>,
    #[serde(default)]
    pub reference_mask: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SynthesisResponse {
    /// Base64 PNG, 128×128 RGB.
    pub image: String,
    pub seed: u64,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct Health {
    pub status: String,
    pub checkpoint_id: Option<String>,
    pub param_count: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ErrorBody {
    pub error: String,
}

/// A model ready to serve, with the metadata `/v1/health` reports.
pub struct Ready {
    pub model: Arc<dyn Synthesizer>,
    pub checkpoint_id: String,
    pub param_count: usize,
}

#[derive(Clone)]
pub struct AppState {
    ready: Arc<OnceLock<Ready>>,
    lanes: Arc<Semaphore>,
    default_seed: u64,
}

impl AppState {
    /// `parallelism` bounds the number of concurrent forward passes.
    pub fn new(parallelism: usize, default_seed: Option<u64>) -> Self {
        Self {
            ready: Arc::new(OnceLock::new()),
            lanes: Arc::new(Semaphore::new(parallelism.max(1))),
            default_seed: default_seed.unwrap_or(DEFAULT_TASK_SEED),
        }
    }

    /// Makes a loaded model available. Fails if one is already installed.
    pub fn install(&self, model: Arc<HairGan>) -> hairgan::Result<()> {
        let ready = Ready {
            checkpoint_id: checkpoint_id(&model)?,
            param_count: model.generator_param_count(),
            model,
        };
        self.install_ready(ready)
    }

    /// Installs any [`Synthesizer`] with explicit metadata.
    pub fn install_ready(&self, ready: Ready) -> hairgan::Result<()> {
        self.ready
            .set(ready)
            .map_err(|_| Error::InvalidArgument("a model is already installed".into()))
    }

    pub fn is_ready(&self) -> bool {
        self.ready.get().is_some()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_ready() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model is loading")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NoHairRegion => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Shape { .. } | Error::InvalidArgument(_) | Error::Image { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

/// Builds the router. With `cors_origin` only that origin is allowed;
/// otherwise any.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Result<Router, String> {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).map_err(|e| format!("bad CORS origin {o:?}: {e}"))?),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    Ok(Router::new()
        .route("/v1/health", get(health))
        .route("/v1/synthesize", post(synthesize))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(cors)
        .with_state(state))
}

async fn health(State(state): State<AppState>) -> Response {
    match state.ready.get() {
        Some(r) => Json(Health {
            status: "ready".into(),
            checkpoint_id: Some(r.checkpoint_id.clone()),
            param_count: Some(r.param_count),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health { status: "loading".into(), checkpoint_id: None, param_count: None }),
        )
            .into_response(),
    }
}

fn decode_png(field: &str, b64: &str) -> Result<image::DynamicImage, ApiError> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::bad_request(format!("{field}: invalid base64: {e}")))?;
    imageio::decode_image(&bytes).map_err(|e| ApiError::bad_request(format!("{field}: {e}")))
}

fn record(id: &str, image_b64: &str, mask_b64: &str) -> Result<SampleRecord, ApiError> {
    let image = decode_png(&format!("{id}_image"), image_b64)?.to_rgb8();
    let mask = decode_png(&format!("{id}_mask"), mask_b64)?.to_luma8();
    Ok(preprocess_sample(id, &image, &mask)?)
}

/// Validates a request and decodes everything it carries.
struct Decoded {
    source: SampleRecord,
    reference: Option<SampleRecord>,
    edited_mask: Option<candle_core::Tensor>,
}

fn decode(req: &SynthesisRequest) -> Result<Decoded, ApiError> {
    let reference_given = match (&req.reference_image, &req.reference_mask) {
        (Some(_), Some(_)) => true,
        (None, None) => false,
        _ => return Err(ApiError::bad_request("reference_image and reference_mask go together")),
    };
    match req.task {
        TaskKind::Transfer if !reference_given => {
            return Err(ApiError::bad_request("transfer needs reference_image and reference_mask"))
        }
        TaskKind::Edit if req.edited_mask.is_none() => return Err(ApiError::bad_request("edit needs edited_mask")),
        TaskKind::Reconstruct if reference_given || req.edited_mask.is_some() => {
            return Err(ApiError::bad_request("reconstruct takes only the source image and mask"))
        }
        TaskKind::Transfer if req.edited_mask.is_some() => {
            return Err(ApiError::bad_request("transfer takes no edited_mask; use task edit"))
        }
        _ => {}
    }
    let source = record("source", &req.source_image, &req.source_mask)?;
    let reference = match (&req.reference_image, &req.reference_mask) {
        (Some(i), Some(m)) => Some(record("reference", i, m)?),
        _ => None,
    };
    let edited_mask = match &req.edited_mask {
        Some(b64) => Some(tasks::mask_from_gray(&decode_png("edited_mask", b64)?.to_luma8())?),
        None => None,
    };
    Ok(Decoded { source, reference, edited_mask })
}

fn run_task(model: &dyn Synthesizer, d: &Decoded, task: TaskKind, seed: u64) -> hairgan::Result<Vec<u8>> {
    let out = match task {
        TaskKind::Reconstruct => tasks::reconstruct(model, &d.source, seed)?,
        TaskKind::Transfer => {
            let r = d.reference.as_ref().expect("validated");
            tasks::transfer_style(model, &d.source, r, seed)?
        }
        TaskKind::Edit => {
            let m = d.edited_mask.as_ref().expect("validated");
            tasks::edit_shape(model, &d.source, d.reference.as_ref(), m, seed)?
        }
    };
    imageio::encode_png_rgb(&imageio::tensor_to_rgb(&out.image)?)
}

async fn synthesize(
    State(state): State<AppState>,
    body: Result<Json<SynthesisRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<SynthesisResponse>, ApiError> {
    let Some(ready) = state.ready.get() else {
        return Err(ApiError::not_ready());
    };
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let model = Arc::clone(&ready.model);
    let seed = req.seed.unwrap_or(state.default_seed);
    let started = Instant::now();
    let decoded = decode(&req)?;
    let _lane = state
        .lanes
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting down"))?;
    let task = req.task;
    let png = tokio::task::spawn_blocking(move || run_task(model.as_ref(), &decoded, task, seed))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(SynthesisResponse {
        image: STANDARD.encode(png),
        seed,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    }))
}
