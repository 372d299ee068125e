use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use predvae::roll::{notes_to_roll_padded, roll_to_notes, PianoRoll, PitchBand, GRID_MS};
use predvae::vae::{ModelDims, ModelParameters};
use predvae::window::WindowSpec;
use predvae::{parse_midi, write_midi, Checkpoint, MusicModel, NoteEvent};
use predvae_service::{rle_decode, rle_encode, router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const BAND: PitchBand = PitchBand { lo: 60, hi: 65 };

fn app_with(seconds: usize, threshold: Option<f64>) -> (Router, Arc<AppState>) {
    let spec = WindowSpec::new(seconds).unwrap();
    let dims = ModelDims::new(spec.input_dim(BAND.n_pitches()), 12, 4).unwrap();
    let model = MusicModel::new(ModelParameters::init(dims, 5), spec, BAND).unwrap();
    let mut ckpt = Checkpoint::new(model, 0.5);
    ckpt.threshold = threshold;
    ckpt.metadata.insert("corpus".into(), "unit".into());
    let state = Arc::new(AppState::new(ckpt));
    (router(state.clone(), None), state)
}

fn app() -> Router {
    app_with(2, Some(0.5)).0
}

async fn send(app: &Router, method: Method, uri: &str, body: impl Into<Body>, content_type: &str) -> (StatusCode, Vec<u8>) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, content_type)
        .body(body.into())
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    (status, response.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (status, bytes) = send(app, Method::POST, uri, body.to_string(), "application/json").await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Method::GET, uri, Body::empty(), "application/json").await
}

fn runs(v: &Value) -> Vec<[usize; 3]> {
    serde_json::from_value(v.clone()).unwrap()
}

fn all_zero_window() -> Value {
    json!([])
}

#[tokio::test]
async fn model_metadata_echo() {
    let (status, body) = get(&app(), "/api/model").await;
    assert_eq!(status, StatusCode::OK);
    let info: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(info["input_dim"], 6 * 20);
    assert_eq!(info["latent_dim"], 4);
    assert_eq!(info["window_seconds"], 2);
    assert_eq!(info["stride"], 10);
    assert_eq!((info["pitch_lo"].clone(), info["pitch_hi"].clone()), (json!(60), json!(65)));
    assert_eq!(info["threshold"], 0.5);
    assert_eq!(info["flatten_order"], "pitch-major");
    assert_eq!(info["metadata"]["corpus"], "unit");
}

#[tokio::test]
async fn encode_zero_window_gives_finite_codes() {
    let (status, body) = post(&app(), "/api/encode", json!({ "window": all_zero_window() })).await;
    assert_eq!(status, StatusCode::OK);
    for key in ["mu", "logvar"] {
        let v: Vec<f64> = serde_json::from_value(body[key].clone()).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}

#[tokio::test]
async fn decode_returns_binary_window_and_optional_probs() {
    let app = app();
    let (status, body) = post(&app, "/api/decode", json!({ "z": [0.1, -0.2, 0.3, 0.0], "probs": true })).await;
    assert_eq!(status, StatusCode::OK);
    let probs: Vec<f64> = serde_json::from_value(body["probs"].clone()).unwrap();
    assert_eq!(probs.len(), 120);
    let window = rle_decode(&runs(&body["window"]), 6, 20).unwrap();
    let expected: Vec<u8> = probs.iter().map(|&p| (p > 0.5) as u8).collect();
    assert_eq!(window, expected);

    let (_, body) = post(&app, "/api/decode", json!({ "z": [0.1, -0.2, 0.3, 0.0], "threshold": 1.0 })).await;
    assert!(body.get("probs").is_none());
    assert_eq!(body["window"], json!([]));
}

#[tokio::test]
async fn continue_is_deterministic() {
    let app = app();
    let payload = json!({ "window": [[0, 0, 5], [3, 10, 10]], "threshold": 0.5, "latent_delta": [0.0, 0.5, 0.0, 0.0] });
    let (s1, a) = post(&app, "/api/continue", payload.clone()).await;
    let (s2, b) = post(&app, "/api/continue", payload).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
    let next = rle_decode(&runs(&a["next_window"]), 6, 20).unwrap();
    let new_cols = rle_decode(&runs(&a["new_cols"]), 6, 10).unwrap();
    for r in 0..6 {
        assert_eq!(&new_cols[r * 10..r * 10 + 10], &next[r * 20 + 10..r * 20 + 20]);
    }
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let (status, body) = send(&app, Method::POST, "/api/encode", "{not json", "application/json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(serde_json::from_slice::<Value>(&body).unwrap()["error"].is_string());
    // wrong field types are malformed payloads too
    assert_eq!(post(&app, "/api/encode", json!({ "window": "x" })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/api/encode", json!({ "window": [], "extra": 1 })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/api/continue", json!({})).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/api/decode", json!({ "z": [0, 0, 0, 0], "threshold": 1.5 })).await.0, StatusCode::BAD_REQUEST);

    assert_eq!(post(&app, "/api/decode", json!({ "z": [0.0, 0.0] })).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&app, "/api/encode", json!({ "window": [[6, 0, 1]] })).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&app, "/api/encode", json!({ "window": [[0, 15, 6]] })).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let bad_delta = json!({ "window": [], "latent_delta": [1.0] });
    assert_eq!(post(&app, "/api/continue", bad_delta).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    assert_eq!(post(&app, "/api/session/99/step", json!({})).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/session/99/export").await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&app, "/api/continue", json!({ "session": 99 })).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/nothing").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn studio_flow_against_sessions() {
    let app = app();
    let (status, created) = post(&app, "/api/session", json!({ "random_seed": 3 })).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["id"].as_u64().unwrap();
    let (w, stride) = (created["width"].as_u64().unwrap() as usize, created["stride"].as_u64().unwrap() as usize);
    let mut canvas: Vec<Vec<u8>> = {
        let seed = rle_decode(&runs(&created["seed_window"]), 6, w).unwrap();
        seed.chunks(w).map(<[u8]>::to_vec).collect()
    };

    let step_uri = format!("/api/session/{id}/step");
    for k in 1..=4 {
        // the last step moves one slider
        let body = if k == 4 { json!({ "latent_delta": [0.0, 0.0, 0.8, 0.0] }) } else { json!({}) };
        let (status, step) = post(&app, &step_uri, body).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(step["step"], k);
        let cols = rle_decode(&runs(&step["new_cols"]), 6, stride).unwrap();
        for (row, chunk) in canvas.iter_mut().zip(cols.chunks(stride)) {
            row.extend_from_slice(chunk);
        }
        assert_eq!(step["n_cols"], w + k * stride);
    }

    let (_, info) = get(&app, &format!("/api/session/{id}")).await;
    let info: Value = serde_json::from_slice(&info).unwrap();
    let n_cols = info["roll"]["n_cols"].as_u64().unwrap() as usize;
    assert_eq!(n_cols, w + 4 * stride);
    let server_roll = rle_decode(&runs(&info["roll"]["cells"]), 6, n_cols).unwrap();
    assert_eq!(server_roll, canvas.concat());
    assert_eq!(info["deltas"][3], json!([0.0, 0.0, 0.8, 0.0]));
    assert_eq!(info["deltas"][0], json!([]));

    let (status, smf) = get(&app, &format!("/api/session/{id}/export")).await;
    assert_eq!(status, StatusCode::OK);
    let parsed = parse_midi(&smf).unwrap();
    assert_eq!(parsed.length_ms, n_cols as u64 * GRID_MS);
    let reingested = notes_to_roll_padded(&parsed.notes, BAND, GRID_MS, n_cols).unwrap().roll;
    assert_eq!(reingested.cells(), server_roll.as_slice());
}

#[tokio::test]
async fn continue_from_session_does_not_advance_it() {
    let app = app();
    let (_, created) = post(&app, "/api/session", json!({ "window": [[1, 0, 20]], "threshold": 0.4 })).await;
    let id = created["id"].as_u64().unwrap();
    let (_, peek) = post(&app, "/api/continue", json!({ "session": id })).await;
    let (_, again) = post(&app, "/api/continue", json!({ "session": id })).await;
    assert_eq!(peek, again);
    let (_, step) = post(&app, &format!("/api/session/{id}/step"), json!({})).await;
    assert_eq!(step["step"], 1);
    assert_eq!(step["new_cols"], peek["new_cols"]);
}

#[tokio::test]
async fn interleaved_sessions_do_not_interfere() {
    let app = app();
    let seeds = [json!({ "random_seed": 1 }), json!({ "window": [[2, 3, 9]] })];
    let deltas = [json!({ "latent_delta": [0.3, 0.0, 0.0, 0.0] }), json!({})];

    // reference: each session stepped on its own
    let mut solo = Vec::new();
    for (seed, delta) in seeds.iter().zip(&deltas) {
        let (_, s) = post(&app, "/api/session", seed.clone()).await;
        let uri = format!("/api/session/{}/step", s["id"]);
        let mut outs = Vec::new();
        for _ in 0..3 {
            outs.push(post(&app, &uri, delta.clone()).await.1);
        }
        solo.push(outs);
    }

    let mut ids = Vec::new();
    for seed in &seeds {
        ids.push(post(&app, "/api/session", seed.clone()).await.1["id"].clone());
    }
    let mut interleaved = vec![Vec::new(), Vec::new()];
    for _ in 0..3 {
        let (uri_a, uri_b) = (format!("/api/session/{}/step", ids[0]), format!("/api/session/{}/step", ids[1]));
        let a = post(&app, &uri_a, deltas[0].clone());
        let b = post(&app, &uri_b, deltas[1].clone());
        let (a, b) = tokio::join!(a, b);
        interleaved[0].push(a.1);
        interleaved[1].push(b.1);
    }
    assert_eq!(interleaved, solo);
}

#[tokio::test]
async fn model_is_never_mutated() {
    let (app, state) = app_with(1, None);
    let before = state.model().clone();
    let (_, s) = post(&app, "/api/session", json!({})).await;
    assert_eq!(s["threshold"], 0.5);
    post(&app, &format!("/api/session/{}/step", s["id"]), json!({ "latent_delta": [1.0, 1.0, 1.0, 1.0] })).await;
    post(&app, "/api/continue", json!({ "window": [[0, 0, 10]] })).await;
    assert_eq!(state.model(), &before);
    assert_eq!(state.session_count(), 1);
    let (status, _) = send(&app, Method::DELETE, &format!("/api/session/{}", s["id"]), Body::empty(), "text/plain").await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(state.session_count(), 0);
}

fn sample_midi() -> Vec<u8> {
    write_midi(&[NoteEvent::new(60, 0, 2500), NoteEvent::new(64, 500, 300), NoteEvent::new(90, 0, 100)])
}

#[tokio::test]
async fn midi_upload_raw_and_multipart() {
    let app = app();
    let bytes = sample_midi();
    let (status, raw) = send(&app, Method::POST, "/api/midi", bytes.clone(), "audio/midi").await;
    assert_eq!(status, StatusCode::OK);
    let raw: Value = serde_json::from_slice(&raw).unwrap();
    assert_eq!(raw["roll"]["n_cols"], 25);
    assert_eq!(raw["dropped"], 1);
    let cells = rle_decode(&runs(&raw["roll"]["cells"]), 6, 25).unwrap();
    let mut expected = PianoRoll::zeros(BAND, 25);
    (0..25).for_each(|c| expected.set(0, c, true));
    (5..8).for_each(|c| expected.set(4, c, true));
    assert_eq!(cells, expected.cells());
    assert_eq!(raw["seed_window"], json!(rle_encode(expected.slice_cols(0, 20).cells(), 20)));
    assert_eq!(roll_to_notes(&expected, GRID_MS).len(), 2);

    let boundary = "XBOUNDARYX";
    let mut form = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"a.mid\"\r\nContent-Type: audio/midi\r\n\r\n"
    )
    .into_bytes();
    form.extend_from_slice(&bytes);
    form.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let content_type = format!("multipart/form-data; boundary={boundary}");
    let (status, multi) = send(&app, Method::POST, "/api/midi", form, &content_type).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&multi).unwrap(), raw);

    let (status, _) = send(&app, Method::POST, "/api/midi", &b"MThd garbage"[..], "audio/midi").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, Method::POST, "/api/midi", format!("--{boundary}--\r\n"), &content_type).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn index_page_is_served() {
    let (status, body) = get(&app(), "/").await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/model"));
}

#[tokio::test]
async fn static_directory_is_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>studio</p>").unwrap();
    let (_, state) = app_with(1, None);
    let app = router(state, Some(dir.path().to_path_buf()));
    let (status, body) = get(&app, "/").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>studio</p>");
    assert_eq!(get(&app, "/api/model").await.0, StatusCode::OK);
}
