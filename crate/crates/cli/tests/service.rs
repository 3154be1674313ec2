use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use candle_core::DType;
use hairgan::model::{count_params, HairGan, ModelConfig};
use hairgan::synthetic;
use hairgan_cli::service::{router, AppState, Health, SynthesisRequest, SynthesisResponse};
use tower::ServiceExt;

fn b64_png_rgb(img: &image::RgbImage) -> String {
    STANDARD.encode(hairgan::imageio::encode_png_rgb(img).unwrap())
}

fn b64_png_gray(img: &image::GrayImage) -> String {
    STANDARD.encode(hairgan::imageio::encode_png_gray(img).unwrap())
}

fn portrait_b64(index: usize) -> (String, String) {
    let p = synthetic::portrait(11, index, 128);
    (b64_png_rgb(&p.image), b64_png_gray(&p.mask))
}

fn request(task: &str) -> SynthesisRequest {
    let (image, mask) = portrait_b64(0);
    SynthesisRequest {
        task: task.parse().unwrap(),
        source_image: image,
        source_mask: mask,
        edited_mask: None,
        reference_image: None,
        reference_mask: None,
        seed: Some(7),
    }
}

fn model() -> Arc<HairGan> {
    Arc::new(HairGan::new(&ModelConfig::miniature(), DType::F32, 3).unwrap())
}

fn ready_app(parallelism: usize) -> (Router, Arc<HairGan>) {
    let state = AppState::new(parallelism, None);
    let m = model();
    state.install(m.clone()).unwrap();
    (router(state, None).unwrap(), m)
}

async fn post_json(app: &Router, body: String) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/v1/synthesize")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn post(app: &Router, req: &SynthesisRequest) -> (StatusCode, Vec<u8>) {
    post_json(app, serde_json::to_string(req).unwrap()).await
}

async fn health(app: &Router) -> (StatusCode, Health) {
    let resp = app.clone().oneshot(Request::get("/v1/health").body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn image_of(body: &[u8]) -> (SynthesisResponse, image::DynamicImage) {
    let r: SynthesisResponse = serde_json::from_slice(body).unwrap();
    let png = STANDARD.decode(&r.image).unwrap();
    let img = image::load_from_memory(&png).unwrap();
    (r, img)
}

#[tokio::test]
async fn everything_is_503_before_the_model_loads() {
    let state = AppState::new(1, None);
    let app = router(state.clone(), None).unwrap();
    let (status, h) = health(&app).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(h.status, "loading");
    assert_eq!(post(&app, &request("reconstruct")).await.0, StatusCode::SERVICE_UNAVAILABLE);

    state.install(model()).unwrap();
    assert!(state.is_ready());
    assert_eq!(health(&app).await.0, StatusCode::OK);
    assert!(state.install(model()).is_err());
}

#[tokio::test]
async fn health_reports_the_loaded_generator() {
    let (app, m) = ready_app(1);
    let (status, h) = health(&app).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h.status, "ready");
    assert_eq!(h.param_count, Some(count_params(m.generator.params())));
    assert_eq!(h.checkpoint_id, Some(hairgan::checkpoint::checkpoint_id(&m).unwrap()));
}

#[tokio::test]
async fn reconstruct_returns_a_128_png_and_echoes_the_seed() {
    let (app, _) = ready_app(1);
    let (status, body) = post(&app, &request("reconstruct")).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let (r, img) = image_of(&body);
    assert_eq!((img.width(), img.height()), (128, 128));
    assert_eq!(r.seed, 7);
    assert!(r.latency_ms >= 0.0);
}

#[tokio::test]
async fn same_request_and_seed_give_identical_png_bytes() {
    let (app, _) = ready_app(1);
    let mut req = request("transfer");
    let (ri, rm) = portrait_b64(1);
    req.reference_image = Some(ri);
    req.reference_mask = Some(rm);
    let a = image_of(&post(&app, &req).await.1).0;
    let b = image_of(&post(&app, &req).await.1).0;
    assert_eq!(a.image, b.image);
    req.seed = Some(8);
    let c = image_of(&post(&app, &req).await.1).0;
    assert_ne!(a.image, c.image);
}

#[tokio::test]
async fn invariant_violations_are_400() {
    let (app, _) = ready_app(1);
    assert_eq!(post(&app, &request("transfer")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, &request("edit")).await.0, StatusCode::BAD_REQUEST);

    let mut half = request("transfer");
    half.reference_image = Some(portrait_b64(1).0);
    assert_eq!(post(&app, &half).await.0, StatusCode::BAD_REQUEST);

    let mut junk = request("reconstruct");
    junk.source_image = "not base64!".into();
    assert_eq!(post(&app, &junk).await.0, StatusCode::BAD_REQUEST);

    let mut not_png = request("reconstruct");
    not_png.source_mask = STANDARD.encode(b"plain bytes");
    assert_eq!(post(&app, &not_png).await.0, StatusCode::BAD_REQUEST);

    assert_eq!(post_json(&app, "{".into()).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_json(&app, r#"{"task": "paint"}"#.into()).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn reference_without_hair_is_422() {
    let (app, _) = ready_app(1);
    let mut req = request("transfer");
    let p = synthetic::portrait(11, 1, 128);
    req.reference_image = Some(b64_png_rgb(&p.image));
    req.reference_mask = Some(b64_png_gray(&image::GrayImage::new(128, 128)));
    let (status, body) = post(&app, &req).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&body));
}

#[tokio::test]
async fn edit_with_the_source_mask_matches_reconstruct() {
    let (app, _) = ready_app(1);
    let rec = request("reconstruct");
    let mut edit = request("edit");
    edit.edited_mask = Some(edit.source_mask.clone());
    let a = image_of(&post(&app, &rec).await.1).0;
    let (status, body) = post(&app, &edit).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    assert_eq!(a.image, image_of(&body).0.image);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_requests_match_serial_results() {
    let (app, _) = ready_app(2);
    let reqs: Vec<SynthesisRequest> = (0..4)
        .map(|k| SynthesisRequest { seed: Some(k), ..request("reconstruct") })
        .collect();
    let mut serial = Vec::new();
    for r in &reqs {
        serial.push(image_of(&post(&app, r).await.1).0.image);
    }
    let handles: Vec<_> = reqs
        .iter()
        .cloned()
        .map(|r| {
            let app = app.clone();
            tokio::spawn(async move { post(&app, &r).await })
        })
        .collect();
    for (h, expected) in handles.into_iter().zip(serial) {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(image_of(&body).0.image, expected);
    }
}

#[tokio::test]
async fn cors_allows_the_configured_origin() {
    let state = AppState::new(1, None);
    state.install(model()).unwrap();
    let app = router(state, Some("http://localhost:5173")).unwrap();
    let req = Request::get("/v1/health")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
}

#[tokio::test]
async fn default_seed_is_used_and_reported_when_omitted() {
    let state = AppState::new(1, Some(99));
    state.install(model()).unwrap();
    let app = router(state, None).unwrap();
    let req = SynthesisRequest { seed: None, ..request("reconstruct") };
    let (r, _) = image_of(&post(&app, &req).await.1);
    assert_eq!(r.seed, 99);
}
