mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use sbmpa::backends::{
    batch_generate, BackendError, BatchError, GenerationRequest, HttpSettings, LiveConfig, LiveEmbedder,
    LiveEmbedderConfig, LiveGenerator, Recorder, ReplayGenerator, ScoredGenerator, StubGenerator,
};
use sbmpa_core::metrics::EmbeddingProvider;

fn request(prompt: &str, image: Option<&str>, n: usize) -> GenerationRequest {
    GenerationRequest { prompt: prompt.into(), image_ref: image.map(Into::into), num_candidates: n }
}

fn settings(addr: std::net::SocketAddr, path: &str) -> HttpSettings {
    HttpSettings { backoff_ms: 1, timeout_ms: 2_000, ..HttpSettings::new(format!("http://{addr}{path}")) }
}

async fn generate(Json(body): Json<Value>) -> Json<Value> {
    let prompt = body["prompt"].as_str().unwrap_or("").to_string();
    let image = body.get("image").and_then(Value::as_str).unwrap_or("-").to_string();
    Json(json!({ "candidates": [
        { "text": "teapot", "logprob": -2.0 },
        { "text": format!("{prompt}|{image}"), "logprob": -0.5 },
        { "text": "  ", "logprob": -0.1 },
        { "text": "cup", "logprob": -1.0 },
    ]}))
}

async fn flaky(State(calls): State<Arc<AtomicUsize>>) -> (StatusCode, Json<Value>) {
    if calls.fetch_add(1, Ordering::SeqCst) < 2 {
        // Stall past the client timeout on the first two calls.
        tokio::time::sleep(Duration::from_millis(400)).await;
    }
    (StatusCode::OK, Json(json!({ "candidates": [{ "text": "ok", "logprob": -1.0 }] })))
}

async fn not_found() -> (StatusCode, &'static str) {
    (StatusCode::NOT_FOUND, "no such model")
}

async fn embed(Json(body): Json<Value>) -> Json<Value> {
    let n = body["text"].as_str().unwrap_or("").len();
    Json(json!({ "embedding": vec![1.0; n.min(4)] }))
}

fn mock() -> (std::net::SocketAddr, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let app = Router::new()
        .route("/generate", post(generate))
        .route("/flaky", post(flaky))
        .route("/missing", post(not_found))
        .route("/embed", post(embed))
        .with_state(calls.clone());
    (common::spawn(app), calls)
}

#[test]
fn live_generator_parses_sorts_and_truncates() {
    let (addr, _) = mock();
    let generator = LiveGenerator::new(LiveConfig::new(settings(addr, "/generate")));
    let out = generator.generate_scored(&request("What is this?", Some("https://x/v0.png"), 2)).unwrap();
    let texts: Vec<&str> = out.candidates.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["What is this?|https://x/v0.png", "cup"]);
    assert_eq!(out.backend_id, "live");
}

#[test]
fn local_images_are_sent_inline() {
    let (addr, _) = mock();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.png");
    std::fs::write(&path, b"png").unwrap();
    let generator = LiveGenerator::new(LiveConfig::new(settings(addr, "/generate")));
    let out = generator.generate_scored(&request("p", Some(path.to_str().unwrap()), 1)).unwrap();
    assert_eq!(out.candidates[0].text, "p|cG5n");
    let missing = generator.generate_scored(&request("p", Some("/nonexistent/v.png"), 1)).unwrap_err();
    assert!(matches!(missing, BackendError::InvalidRequest(_)));
}

#[test]
fn http_errors_are_protocol_errors_with_the_body() {
    let (addr, _) = mock();
    let generator = LiveGenerator::new(LiveConfig::new(settings(addr, "/missing")));
    let err = generator.generate_scored(&request("p", None, 1)).unwrap_err();
    assert_eq!(err, BackendError::ProtocolError("HTTP 404: no such model".into()));
}

#[test]
fn timeouts_are_retried() {
    let (addr, calls) = mock();
    let mut s = settings(addr, "/flaky");
    s.timeout_ms = 150;
    let generator = LiveGenerator::new(LiveConfig::new(s.clone()));
    let out = generator.generate_scored(&request("p", None, 1)).unwrap();
    assert_eq!(out.candidates[0].text, "ok");
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    calls.store(0, Ordering::SeqCst);
    s.attempts = 2;
    let err = LiveGenerator::new(LiveConfig::new(s)).generate_scored(&request("p", None, 1)).unwrap_err();
    assert_eq!(err, BackendError::Timeout(150));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let mut s = HttpSettings::new("http://127.0.0.1:9/none");
    s.attempts = 1;
    let err = LiveGenerator::new(LiveConfig::new(s)).generate_scored(&request("p", None, 1)).unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
}

#[test]
fn live_embedder_checks_the_dimension() {
    let (addr, _) = mock();
    let embedder = LiveEmbedder::new(LiveEmbedderConfig::new(settings(addr, "/embed"), 4));
    assert_eq!(embedder.embed("wood").unwrap().vector, vec![1.0; 4]);
    let err = embedder.embed("oak").unwrap_err();
    assert_eq!(err, BackendError::ProtocolError("dimension mismatch: expected 4, got 3".into()));
}

#[test]
fn recorded_exchanges_replay_identically() {
    let recorder = Recorder::new(StubGenerator::new(3));
    let requests: Vec<GenerationRequest> =
        (0..20).map(|i| request(&format!("What is object {i}?"), Some(&format!("v{i}.png")), 5)).collect();
    let live: Vec<_> = batch_generate(&recorder, &requests, 4).unwrap().into_iter().map(Result::unwrap).collect();
    let replay = ReplayGenerator::new(recorder.fixtures()).unwrap();
    assert_eq!(replay.backend_id(), "stub-3");
    for (req, want) in requests.iter().zip(&live) {
        assert_eq!(replay.generate_scored(req).unwrap().candidates, want.candidates);
    }
    let miss = request("never asked", None, 5);
    assert_eq!(replay.generate_scored(&miss).unwrap_err(), BackendError::ReplayMiss(miss.replay_key()));
}

#[test]
fn batches_keep_positions_and_reject_zero_concurrency() {
    let stub = StubGenerator::new(0);
    let requests: Vec<GenerationRequest> = (0..50).map(|i| request(&format!("q{i}"), None, 3)).collect();
    let parallel = batch_generate(&stub, &requests, 8).unwrap();
    let serial = batch_generate(&stub, &requests, 1).unwrap();
    for (a, b) in parallel.iter().zip(&serial) {
        assert_eq!(a.as_ref().unwrap().candidates, b.as_ref().unwrap().candidates);
    }
    assert_eq!(batch_generate(&stub, &requests, 0).unwrap_err(), BatchError::BatchAborted);
}
