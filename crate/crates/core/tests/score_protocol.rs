//! Score-service client against an in-process mock server.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use sf_core::geometry::Camera;
use sf_core::guidance::{
    class_embedding, GuidanceContext, GuidanceError, GuidanceMode, RemoteClient, RemoteConfig, ScoreRequest,
    ScoreResponse, PROTOCOL_HEADER,
};
use sf_core::image::RgbImage;
use sf_core::io::{decode_exr, encode_exr};

#[derive(Clone)]
struct Mock {
    version: &'static str,
    scored: Arc<AtomicUsize>,
    lora_steps: Arc<AtomicUsize>,
}

fn headers(version: &'static str) -> [(&'static str, &'static str); 1] {
    [(PROTOCOL_HEADER, version)]
}

async fn score(State(m): State<Mock>, h: HeaderMap, Json(req): Json<ScoreRequest>) -> impl IntoResponse {
    assert_eq!(h.get(PROTOCOL_HEADER).unwrap(), "1");
    m.scored.fetch_add(1, Ordering::SeqCst);
    let img = decode_exr(&B64.decode(req.image).unwrap()).unwrap();
    let zeros = RgbImage::filled(img.width(), img.height(), [0.0; 3]);
    let resp = ScoreResponse {
        request_id: req.request_id,
        gradient: B64.encode(encode_exr(&zeros).unwrap()),
        t: req.t_max as f64,
        alpha_t: 0.125,
        w_t: 1.0,
    };
    (headers(m.version), Json(resp))
}

async fn lora(State(m): State<Mock>) -> impl IntoResponse {
    m.lora_steps.fetch_add(1, Ordering::SeqCst);
    (headers(m.version), "{}")
}

async fn health(State(m): State<Mock>) -> impl IntoResponse {
    (StatusCode::OK, headers(m.version), "ok")
}

fn spawn_mock(version: &'static str) -> (SocketAddr, Mock) {
    let mock = Mock { version, scored: Arc::default(), lora_steps: Arc::default() };
    let app = Router::new()
        .route("/v1/score", post(score))
        .route("/v1/lora-step", post(lora))
        .route("/v1/health", get(health))
        .with_state(mock.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), mock)
}

fn client(url: String) -> RemoteClient {
    RemoteClient::new(RemoteConfig { retries: 2, backoff_ms: 10, timeout_ms: 10_000, ..RemoteConfig::new(url) }).unwrap()
}

#[test]
fn zero_mock_round_trip_echoes_metadata() {
    let (addr, mock) = spawn_mock("1");
    let c = client(format!("http://{addr}"));
    c.health().unwrap();
    let img = RgbImage::from_fn(16, 8, |x, y| [x as f64 / 16.0, y as f64 / 8.0, 0.5]);
    let ctx = GuidanceContext { prompt: "a chair".into(), ..GuidanceContext::default() };
    let g = c.score(&img, &ctx, Some(&img), None).unwrap();
    assert_eq!(g.gradient.dimensions(), (16, 8));
    assert!(g.gradient.pixels().iter().all(|p| *p == [0.0; 3]));
    assert_eq!((g.t, g.alpha_t, g.w_t), (990.0, 0.125, 1.0));
    c.lora_step().unwrap();
    assert_eq!(mock.scored.load(Ordering::SeqCst), 1);
    assert_eq!(mock.lora_steps.load(Ordering::SeqCst), 1);
}

#[test]
fn concurrent_requests_are_matched_by_id() {
    let (addr, mock) = spawn_mock("1");
    let c = client(format!("http://{addr}"));
    let ctx = GuidanceContext::default();
    std::thread::scope(|s| {
        for k in 1..=4 {
            let (c, ctx) = (&c, &ctx);
            s.spawn(move || {
                let img = RgbImage::filled(4 * k, 4, [0.2; 3]);
                let g = c.score(&img, ctx, None, None).unwrap();
                assert_eq!(g.gradient.dimensions(), (4 * k, 4));
            });
        }
    });
    assert_eq!(mock.scored.load(Ordering::SeqCst), 4);
}

#[test]
fn version_mismatch_is_a_hard_error() {
    let (addr, mock) = spawn_mock("2");
    let c = client(format!("http://{addr}"));
    let err = c.score(&RgbImage::filled(2, 2, [0.0; 3]), &GuidanceContext::default(), None, None).unwrap_err();
    assert!(matches!(err, GuidanceError::ProtocolVersion { .. }), "{err}");
    assert_eq!(mock.scored.load(Ordering::SeqCst), 1, "no retries on a version mismatch");
}

#[test]
fn service_down_fails_after_retries() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = client(format!("http://127.0.0.1:{port}"));
    let err = c.score(&RgbImage::filled(2, 2, [0.0; 3]), &GuidanceContext::default(), None, None).unwrap_err();
    match err {
        GuidanceError::Unavailable { attempts, .. } => assert_eq!(attempts, 3),
        e => panic!("unexpected {e}"),
    }
    assert!(err_text(&c).starts_with("guidance service unavailable"));
}

fn err_text(c: &RemoteClient) -> String {
    c.health().unwrap_err().to_string()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden_request() -> ScoreRequest {
    let cam = Camera::orbit(0.0, 30.0, 1.0);
    let ctx = GuidanceContext {
        prompt: "a leather sofa, front view".into(),
        negative_prompt: String::new(),
        t_range: (500, 990),
        cfg_scale: 7.5,
        lambda: 1.0,
        class_embedding: class_embedding([1.0, 1.0], &cam),
        mode: GuidanceMode::Local,
        ..GuidanceContext::default()
    };
    let img = RgbImage::filled(512, 512, [0.5; 3]);
    ScoreRequest::build("golden-00000000".into(), &img, &ctx, None, None).unwrap()
}

#[test]
fn local_view_request_matches_golden_file() {
    let json = serde_json::to_string_pretty(&golden_request()).unwrap();
    let path = fixture("score_request_local_512.json");
    if std::env::var_os("SF_BLESS").is_some() {
        std::fs::write(&path, &json).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(json, golden);
    let back: ScoreRequest = serde_json::from_str(&golden).unwrap();
    assert_eq!(back, golden_request());
    let img = decode_exr(&B64.decode(&back.image).unwrap()).unwrap();
    assert_eq!(img.dimensions(), (512, 512));
}

#[test]
fn golden_response_decodes() {
    let path = fixture("score_response_4x4.json");
    if std::env::var_os("SF_BLESS").is_some() {
        let g = RgbImage::from_fn(4, 4, |x, y| [x as f64 * 0.25, -(y as f64) * 0.5, 0.0]);
        let resp = ScoreResponse {
            request_id: "golden-00000001".into(),
            gradient: B64.encode(encode_exr(&g).unwrap()),
            t: 742.0,
            alpha_t: 0.0625,
            w_t: 0.5,
        };
        std::fs::write(&path, serde_json::to_string_pretty(&resp).unwrap()).unwrap();
    }
    let resp: ScoreResponse = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let g = resp.decode(4, 4).unwrap();
    assert_eq!(g.gradient.get(3, 2), [0.75, -1.0, 0.0]);
    assert_eq!((g.t, g.alpha_t, g.w_t), (742.0, 0.0625, 0.5));
}
