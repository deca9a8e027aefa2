use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use retouch_core::agents::{AgentError, ScriptedChat};
use retouch_core::filters::{execute_program, FilterKind, RetouchStep};
use retouch_core::orchestrator::{AgentKind, Agents};
use retouch_core::program::RetouchProgram;
use retouch_core::raster::{decode_image_bytes, encode_png, BitDepth, ImageBuffer};
use retouch_core::scoring::StatsProvider;
use retouch_service::{router, AgentResolver, AppState};

const BOUNDARY: &str = "retouchtestboundary";

fn scene(seed: usize) -> ImageBuffer {
    ImageBuffer::from_fn(40, 32, |x, y| {
        let v = 0.5 + 0.2 * ((x as f32 * 0.23 + seed as f32).sin() + (y as f32 * 0.19).cos()) / 2.0;
        [v * 1.05, v, v * 0.9]
    })
    .unwrap()
}

fn degraded(clean: &ImageBuffer) -> ImageBuffer {
    let program = RetouchProgram::new(vec![
        RetouchStep::new(FilterKind::Exposure, -0.6).unwrap(),
        RetouchStep::new(FilterKind::Saturation, -0.5).unwrap(),
        RetouchStep::new(FilterKind::Temperature, -0.4).unwrap(),
    ]);
    execute_program(clean, &program).unwrap()
}

fn png(img: &ImageBuffer) -> Vec<u8> {
    encode_png(img, BitDepth::Sixteen).unwrap()
}

enum Part<'a> {
    File(&'a str, Vec<u8>),
    Text(&'a str, &'a str),
}

fn multipart(parts: &[Part<'_>]) -> Request<Body> {
    let mut body = Vec::new();
    for part in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match part {
            Part::File(name, bytes) => {
                body.extend_from_slice(
                    format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\nContent-Type: image/png\r\n\r\n")
                        .as_bytes(),
                );
                body.extend_from_slice(bytes);
            }
            Part::Text(name, text) => {
                body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n{text}").as_bytes());
            }
        }
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/sessions")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn send_json(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

async fn reference_session(app: &Router) -> (String, ImageBuffer) {
    let clean = scene(1);
    let source = degraded(&clean);
    let mut parts = vec![Part::File("source", png(&source)), Part::Text("mode", "reference")];
    parts.extend((0..5).map(|_| Part::File("refs", png(&clean))));
    let (status, body) = send_json(app, multipart(&parts)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    (body["session_id"].as_str().unwrap().to_string(), source)
}

#[tokio::test]
async fn healthz() {
    let app = router(AppState::offline(None));
    let (status, body) = send(&app, get("/healthz")).await;
    assert_eq!((status, body.as_slice()), (StatusCode::OK, b"ok".as_slice()));
}

#[tokio::test]
async fn three_steps_with_nonincreasing_scores() {
    let app = router(AppState::offline(None));
    let (id, _) = reference_session(&app).await;
    assert_eq!(id.len(), 32);
    let mut prev = f64::INFINITY;
    for t in 0..3 {
        let (status, body) = send_json(&app, post_json(&format!("/sessions/{id}/step"), json!({}))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let record = &body["iteration_record"];
        assert_eq!(record["t"], t);
        let scores: Vec<f64> = serde_json::from_value(record["scores"].clone()).unwrap();
        let selected = record["selected"].as_u64().unwrap() as usize;
        assert!(scores[0] <= prev + 1e-12);
        assert!(scores[selected] <= scores[0]);
        prev = scores[selected];
    }
    let (status, state) = send_json(&app, get(&format!("/sessions/{id}"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["history"].as_array().unwrap().len(), 3);
    assert_eq!(state["status"], "running");
}

#[tokio::test]
async fn every_image_url_is_fetchable_and_program_replays() {
    let app = router(AppState::offline(None));
    let (id, source) = reference_session(&app).await;
    for _ in 0..2 {
        send_json(&app, post_json(&format!("/sessions/{id}/step"), json!({}))).await;
    }
    let (_, state) = send_json(&app, get(&format!("/sessions/{id}"))).await;
    let images = &state["images"];
    let mut urls = vec![images["source"].as_str().unwrap().to_string(), images["original"].as_str().unwrap().to_string()];
    for key in ["refs", "selections"] {
        urls.extend(images[key].as_array().unwrap().iter().map(|u| u.as_str().unwrap().to_string()));
    }
    for group in images["candidates"].as_array().unwrap() {
        urls.extend(group.as_array().unwrap().iter().map(|u| u.as_str().unwrap().to_string()));
    }
    assert!(urls.len() > 9);
    for url in &urls {
        let (status, bytes) = send(&app, get(url)).await;
        assert_eq!(status, StatusCode::OK, "{url}");
        assert_eq!(decode_image_bytes(&bytes).unwrap().image.width(), 40);
    }
    let (status, bytes) = send(&app, get(&format!("/sessions/{id}/program"))).await;
    assert_eq!(status, StatusCode::OK);
    let program = RetouchProgram::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap();
    let original = decode_image_bytes(&png(&source)).unwrap().image;
    let replay = execute_program(&original, &program).unwrap();
    let (_, served) = send(&app, get(&format!("/sessions/{id}/images/source"))).await;
    let served = decode_image_bytes(&served).unwrap().image;
    let expected = decode_image_bytes(&encode_png(&replay, BitDepth::Eight).unwrap()).unwrap().image;
    assert!(served.bitwise_eq(&expected));
}

#[tokio::test]
async fn error_statuses() {
    let app = router(AppState::offline(None));
    let (status, body) = send_json(&app, get("/sessions/0123")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["retryable"], false);
    let (id, _) = reference_session(&app).await;
    let (status, _) = send_json(&app, post_json(&format!("/sessions/{id}/select"), json!({"index": 99}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = send_json(&app, post_json(&format!("/sessions/{id}/select"), json!({"idx": "x"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send_json(&app, post_json(&format!("/sessions/{id}/instruction"), json!({"text": "warmer"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = send(&app, get(&format!("/sessions/{id}/images/candidate-7-0"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send_json(&app, multipart(&[Part::Text("mode", "reference")])).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = send_json(&app, multipart(&[Part::File("source", b"not an image".to_vec())])).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = send_json(
        &app,
        multipart(&[Part::File("source", png(&scene(2))), Part::Text("config", r#"{"agent": "chat"}"#)]),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (_, state) = send_json(&app, get(&format!("/sessions/{id}"))).await;
    assert!(state["history"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn stopped_session_rejects_steps() {
    let app = router(AppState::offline(None));
    let img = scene(3);
    let (_, body) = send_json(&app, multipart(&[Part::File("source", png(&img)), Part::File("refs", png(&img))])).await;
    let id = body["session_id"].as_str().unwrap();
    let (status, body) = send_json(&app, post_json(&format!("/sessions/{id}/step"), json!({}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "stopped_critic_stop");
    let (status, _) = send_json(&app, post_json(&format!("/sessions/{id}/step"), json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

const REPLY: &str = "Candidate 1\n- Exposure: the brightness of the target image is 20-40% higher than the one of the source image.\n- Overall: Go\nCandidate 2\n- Temperature: the temperature of the target image is 10-20% higher than the one of the source image.\n- Overall: Go\n";

fn scripted_state(fail: bool) -> AppState {
    let resolver: AgentResolver = Arc::new(move |kind| match kind {
        AgentKind::Rule => Ok(Agents::rule()),
        AgentKind::Chat => Ok(Agents::chat(
            Arc::new(ScriptedChat::responder(move |req| {
                if fail {
                    Err(AgentError::Backend("connection refused".into()))
                } else if req.system.contains("Python programmer") {
                    Ok("adj = filter.exposure(0.3)".into())
                } else {
                    Ok(REPLY.into())
                }
            })),
            [0.2, 0.7, 1.0],
        )),
    });
    AppState::new(Arc::new(StatsProvider), resolver, None)
}

async fn instruction_session(app: &Router) -> String {
    let config = r#"{"agent": "chat", "n_candidates": 2}"#;
    let parts = [Part::File("source", png(&scene(4))), Part::Text("mode", "instruction"), Part::Text("config", config)];
    let (status, body) = send_json(app, multipart(&parts)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["state"]["status"], "running");
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn instruction_flow() {
    let app = router(scripted_state(false));
    let id = instruction_session(&app).await;
    let (status, _) = send_json(&app, post_json(&format!("/sessions/{id}/select"), json!({"index": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = send_json(&app, post_json(&format!("/sessions/{id}/instruction"), json!({"text": "brighter"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let candidates = body["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 3);
    assert_eq!(candidates[0]["index"], 0);
    assert_eq!(body["status"], "awaiting_user");
    for c in candidates {
        let (status, _) = send(&app, get(c["image_url"].as_str().unwrap())).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, _) = send_json(&app, post_json(&format!("/sessions/{id}/select"), json!({"index": 99}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, state) = send_json(&app, get(&format!("/sessions/{id}"))).await;
    assert_eq!(state["status"], "awaiting_user");
    let (status, body) = send_json(&app, post_json(&format!("/sessions/{id}/select"), json!({"index": 1}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"]["status"], "running");
    assert_eq!(body["state"]["history"][0]["selection_source"], "user");
    assert_eq!(body["state"]["composed_program"]["steps"][0]["filter"], "exposure");
}

#[tokio::test]
async fn backend_failures_are_retryable_502() {
    let app = router(scripted_state(true));
    let id = instruction_session(&app).await;
    let (status, body) = send_json(&app, post_json(&format!("/sessions/{id}/instruction"), json!({"text": "warmer"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["retryable"], true);
    let (_, state) = send_json(&app, get(&format!("/sessions/{id}"))).await;
    assert_eq!(state["status"], "running");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_steps_never_interleave() {
    let app = router(AppState::offline(None));
    let (id, _) = reference_session(&app).await;
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let app = app.clone();
            let uri = format!("/sessions/{id}/step");
            tokio::spawn(async move { send_json(&app, post_json(&uri, json!({}))).await })
        })
        .collect();
    let mut ts = Vec::new();
    for h in handles {
        let (status, body) = h.await.unwrap();
        if status == StatusCode::OK {
            ts.push(body["iteration_record"]["t"].as_u64().unwrap());
        } else {
            assert_eq!(status, StatusCode::CONFLICT);
        }
    }
    ts.sort();
    assert_eq!(ts, (0..ts.len() as u64).collect::<Vec<_>>());
    let (_, state) = send_json(&app, get(&format!("/sessions/{id}"))).await;
    assert_eq!(state["history"].as_array().unwrap().len(), ts.len());
}

#[tokio::test]
async fn persistence_mirrors_the_export_layout() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::offline(Some(dir.path().to_path_buf())));
    let (id, _) = reference_session(&app).await;
    send_json(&app, post_json(&format!("/sessions/{id}/step"), json!({}))).await;
    for f in ["final.png", "program.retouch.json", "session.json"] {
        assert!(dir.path().join(&id).join(f).exists(), "{f}");
    }
    let transcript: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(&id).join("session.json")).unwrap()).unwrap();
    assert_eq!(transcript["history"].as_array().unwrap().len(), 1);
}
