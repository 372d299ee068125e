//! HTTP API over a trained checkpoint: stateless encode/decode/continue
//! endpoints plus server-side composition sessions for the stepping loop.
//!
//! Windows travel as run-length triples `[row, start, len]` over the
//! model's pitch rows (row 0 is the lowest pitch of the band).

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use predvae::composer::{self, CompositionState, Feedback, ORIGIN_SEED};
use predvae::eval::apply_threshold;
use predvae::roll::{notes_to_roll, roll_to_notes, PianoRoll, GRID_MS};
use predvae::vae::LatentCode;
use predvae::{parse_midi, write_midi_with_length, Checkpoint, MusicModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Threshold used when neither the request nor the checkpoint sets one.
pub const FALLBACK_THRESHOLD: f64 = 0.5;

/// A run of active cells: `[row, start, len]`.
pub type Run = [usize; 3];

pub fn rle_encode(cells: &[u8], width: usize) -> Vec<Run> {
    let mut runs = Vec::new();
    for (row, cols) in cells.chunks(width).enumerate() {
        let mut c = 0;
        while c < cols.len() {
            if cols[c] == 1 {
                let start = c;
                while c < cols.len() && cols[c] == 1 {
                    c += 1;
                }
                runs.push([row, start, c - start]);
            } else {
                c += 1;
            }
        }
    }
    runs
}

/// Expands runs into a flattened `n_rows x width` binary window.
/// Overlapping runs are allowed.
pub fn rle_decode(runs: &[Run], n_rows: usize, width: usize) -> Result<Vec<u8>, ApiError> {
    let mut cells = vec![0u8; n_rows * width];
    for &[row, start, len] in runs {
        if len == 0 {
            return Err(ApiError::bad_request(format!("run [{row}, {start}, 0] is empty")));
        }
        if row >= n_rows || start.checked_add(len).is_none_or(|end| end > width) {
            return Err(ApiError::unprocessable(format!(
                "run [{row}, {start}, {len}] outside a {n_rows} x {width} window"
            )));
        }
        cells[row * width + start..row * width + start + len].fill(1);
    }
    Ok(cells)
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::UNPROCESSABLE_ENTITY, message: message.into() }
    }

    fn not_found(id: u64) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, message: format!("no session {id}") }
    }
}

impl From<predvae::Error> for ApiError {
    fn from(e: predvae::Error) -> Self {
        use predvae::Error as E;
        let status = match e {
            E::DimensionMismatch { .. } | E::IndexOutOfRange { .. } | E::StaleCache => StatusCode::UNPROCESSABLE_ENTITY,
            E::MalformedFile(_) | E::EmptyAfterQuantization { .. } | E::InvalidConfig(_) | E::TooShort { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses a JSON body; an empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn check_threshold(theta: f64) -> Result<f64, ApiError> {
    if (0.0..=1.0).contains(&theta) {
        Ok(theta)
    } else {
        Err(ApiError::bad_request(format!("threshold {theta} outside [0, 1]")))
    }
}

struct Session {
    state: CompositionState,
    threshold: f64,
    /// Latent delta applied at each step so far (empty when none).
    deltas: Vec<Vec<f64>>,
}

pub struct AppState {
    model: MusicModel,
    beta: f64,
    threshold: f64,
    metadata: serde_json::Value,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(checkpoint: Checkpoint) -> Self {
        AppState {
            threshold: checkpoint.threshold.unwrap_or(FALLBACK_THRESHOLD),
            beta: checkpoint.beta,
            metadata: json!(checkpoint.metadata),
            model: checkpoint.model,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn model(&self) -> &MusicModel {
        &self.model
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions.lock().unwrap().get(&id).cloned().ok_or(ApiError::not_found(id))
    }

    fn window(&self, runs: &[Run]) -> Result<Vec<u8>, ApiError> {
        rle_decode(runs, self.model.n_pitches(), self.model.width())
    }

    fn threshold_or_default(&self, theta: Option<f64>) -> Result<f64, ApiError> {
        check_threshold(theta.unwrap_or(self.threshold))
    }
}

type Shared = Arc<AppState>;

#[derive(Serialize)]
struct Latent {
    mu: Vec<f64>,
    logvar: Vec<f64>,
}

impl From<LatentCode> for Latent {
    fn from(code: LatentCode) -> Self {
        Latent { mu: code.mu, logvar: code.logvar }
    }
}

#[derive(Serialize)]
struct RollJson {
    pitch_lo: u8,
    pitch_hi: u8,
    n_cols: usize,
    cells: Vec<Run>,
}

impl From<&PianoRoll> for RollJson {
    fn from(roll: &PianoRoll) -> Self {
        RollJson {
            pitch_lo: roll.band().lo,
            pitch_hi: roll.band().hi,
            n_cols: roll.n_cols(),
            cells: rle_encode(roll.cells(), roll.n_cols()),
        }
    }
}

async fn model_info(State(app): State<Shared>) -> Json<serde_json::Value> {
    let m = &app.model;
    let dims = m.dims();
    Json(json!({
        "input_dim": dims.input_dim,
        "hidden_dim": dims.hidden_dim,
        "latent_dim": dims.latent_dim,
        "window_seconds": m.window.window_seconds,
        "grid_ms": m.window.grid_ms,
        "width": m.width(),
        "stride": m.stride(),
        "pitch_lo": m.band.lo,
        "pitch_hi": m.band.hi,
        "beta": app.beta,
        "threshold": app.threshold,
        "flatten_order": predvae::window::FLATTEN_ORDER,
        "metadata": app.metadata,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodeRequest {
    window: Vec<Run>,
}

async fn encode(State(app): State<Shared>, body: Bytes) -> ApiResult<Latent> {
    let req: EncodeRequest = parse_body(&body)?;
    let window = app.window(&req.window)?;
    Ok(Json(app.model.encode(&window)?.into()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecodeRequest {
    z: Vec<f64>,
    threshold: Option<f64>,
    #[serde(default)]
    probs: bool,
}

#[derive(Serialize)]
struct DecodeResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    window: Vec<Run>,
    threshold: f64,
}

async fn decode(State(app): State<Shared>, body: Bytes) -> ApiResult<DecodeResponse> {
    let req: DecodeRequest = parse_body(&body)?;
    let theta = app.threshold_or_default(req.threshold)?;
    let probs = app.model.decode(&req.z)?;
    let window = rle_encode(&apply_threshold(&probs, theta), app.model.width());
    Ok(Json(DecodeResponse {
        probs: req.probs.then_some(probs),
        window,
        threshold: theta,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContinueRequest {
    session: Option<u64>,
    window: Option<Vec<Run>>,
    threshold: Option<f64>,
    latent_delta: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ContinueResponse {
    next_window: Vec<Run>,
    new_cols: Vec<Run>,
    latent: Latent,
}

/// One stateless loop step. With `session` and no `window`, continues from
/// the session's current input without advancing it.
async fn continue_(State(app): State<Shared>, body: Bytes) -> ApiResult<ContinueResponse> {
    let req: ContinueRequest = parse_body(&body)?;
    let (window, session_theta): (Vec<f64>, Option<f64>) = match (&req.window, req.session) {
        (Some(runs), _) => (app.window(runs)?.into_iter().map(f64::from).collect(), None),
        (None, Some(id)) => {
            let session = app.session(id)?;
            let s = session.lock().unwrap();
            (s.state.current_window().to_vec(), Some(s.threshold))
        }
        (None, None) => return Err(ApiError::bad_request("continue needs a window or a session")),
    };
    let theta = app.threshold_or_default(req.threshold.or(session_theta))?;
    let out = composer::continue_window(&app.model, &window, theta, req.latent_delta.as_deref())?;
    Ok(Json(ContinueResponse {
        next_window: rle_encode(&out.next_window, app.model.width()),
        new_cols: rle_encode(out.new_cols.cells(), app.model.stride()),
        latent: out.latent.into(),
    }))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SessionRequest {
    /// Explicit seed window; otherwise decoded from `random_seed`.
    window: Option<Vec<Run>>,
    /// Latent draw for the seed; 0 decodes the latent origin.
    random_seed: Option<u64>,
    threshold: Option<f64>,
    #[serde(default)]
    feedback: Feedback,
}

#[derive(Serialize)]
struct SessionResponse {
    id: u64,
    seed_window: Vec<Run>,
    width: usize,
    stride: usize,
    threshold: f64,
    feedback: Feedback,
}

async fn create_session(State(app): State<Shared>, body: Bytes) -> Result<(StatusCode, Json<SessionResponse>), ApiError> {
    let req: SessionRequest = parse_body(&body)?;
    let theta = app.threshold_or_default(req.threshold)?;
    let seed = match &req.window {
        Some(runs) => app.window(runs)?,
        None => composer::random_seed_window(&app.model, req.random_seed.unwrap_or(ORIGIN_SEED), theta)?,
    };
    let state = CompositionState::new(&app.model, &seed)?.with_feedback(req.feedback);
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    let session = Session { state, threshold: theta, deltas: Vec::new() };
    app.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(session)));
    log::info!("session {id} created");
    let response = SessionResponse {
        id,
        seed_window: rle_encode(&seed, app.model.width()),
        width: app.model.width(),
        stride: app.model.stride(),
        threshold: theta,
        feedback: req.feedback,
    };
    Ok((StatusCode::CREATED, Json(response)))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    latent_delta: Option<Vec<f64>>,
    threshold: Option<f64>,
}

#[derive(Serialize)]
struct StepResponse {
    new_cols: Vec<Run>,
    latent: Latent,
    step: usize,
    n_cols: usize,
}

async fn step_session(State(app): State<Shared>, Path(id): Path<u64>, body: Bytes) -> ApiResult<StepResponse> {
    let req: StepRequest = parse_body(&body)?;
    let session = app.session(id)?;
    let mut s = session.lock().unwrap();
    let theta = match req.threshold {
        Some(t) => check_threshold(t)?,
        None => s.threshold,
    };
    let out = s.state.step(&app.model, theta, req.latent_delta.as_deref())?;
    s.threshold = theta;
    s.deltas.push(req.latent_delta.unwrap_or_default());
    Ok(Json(StepResponse {
        new_cols: rle_encode(out.new_cols.cells(), app.model.stride()),
        latent: out.latent.into(),
        step: s.state.step_count(),
        n_cols: s.state.n_cols(),
    }))
}

async fn session_info(State(app): State<Shared>, Path(id): Path<u64>) -> ApiResult<serde_json::Value> {
    let session = app.session(id)?;
    let s = session.lock().unwrap();
    Ok(Json(json!({
        "id": id,
        "roll": RollJson::from(&s.state.roll(&app.model)),
        "step": s.state.step_count(),
        "threshold": s.threshold,
        "feedback": s.state.feedback(),
        "deltas": s.deltas,
    })))
}

async fn delete_session(State(app): State<Shared>, Path(id): Path<u64>) -> Result<StatusCode, ApiError> {
    match app.sessions.lock().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(id)),
    }
}

async fn export_session(State(app): State<Shared>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let session = app.session(id)?;
    let roll = session.lock().unwrap().state.roll(&app.model);
    let length_ms = roll.n_cols() as u64 * GRID_MS;
    let bytes = write_midi_with_length(&roll_to_notes(&roll, GRID_MS), length_ms);
    Ok((
        [
            (header::CONTENT_TYPE, "audio/midi".to_owned()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"session-{id}.mid\"")),
        ],
        bytes,
    )
        .into_response())
}

/// Accepts either a multipart form with one file field or the raw SMF bytes.
async fn upload_midi(State(app): State<Shared>, headers: HeaderMap, request: Request) -> ApiResult<serde_json::Value> {
    let is_multipart = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bytes = if is_multipart {
        let mut form = Multipart::from_request(request, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let field = form
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?
            .ok_or_else(|| ApiError::bad_request("multipart form has no file field"))?;
        field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?
    } else {
        Bytes::from_request(request, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?
    };
    let parsed = parse_midi(&bytes)?;
    let quantized = notes_to_roll(&parsed.notes, app.model.band, GRID_MS)?;
    let roll = &quantized.roll;
    let seed_window = (roll.n_cols() >= app.model.width())
        .then(|| rle_encode(roll.slice_cols(0, app.model.width()).cells(), app.model.width()));
    Ok(Json(json!({
        "roll": RollJson::from(roll),
        "seed_window": seed_window,
        "notes": parsed.notes.len(),
        "dropped": quantized.dropped,
        "dangling": parsed.dangling,
    })))
}

const INDEX_HTML: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>predvae studio</title></head>
<body>
<h1>predvae</h1>
<p>The JSON API is served under <code>/api</code>. Start the server with a UI
directory to host the studio front end here.</p>
<ul>
<li><a href="/api/model">GET /api/model</a></li>
<li>POST /api/encode, /api/decode, /api/continue</li>
<li>POST /api/session, /api/session/{id}/step; GET /api/session/{id}/export</li>
<li>POST /api/midi</li>
</ul>
</body></html>
"#;

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn api_not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, message: "no such endpoint".into() }
}

/// Builds the router. With `static_dir`, files there are served at `/`.
pub fn router(state: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/model", get(model_info))
        .route("/encode", post(encode))
        .route("/decode", post(decode))
        .route("/continue", post(continue_))
        .route("/session", post(create_session))
        .route("/session/{id}", get(session_info).delete(delete_session))
        .route("/session/{id}/step", post(step_session))
        .route("/session/{id}/export", get(export_session))
        .route("/midi", post(upload_midi))
        .fallback(api_not_found);
    let app = Router::new().nest("/api", api);
    let app = match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app.route("/", get(index)),
    };
    app.with_state(state)
}

/// Serves `checkpoint` on `addr` until the process is stopped.
pub async fn serve(checkpoint: Checkpoint, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let state = Arc::new(AppState::new(checkpoint));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip() {
        let cells = [0, 1, 1, 0, 1, /**/ 1, 1, 1, 1, 1, /**/ 0, 0, 0, 0, 0];
        let runs = rle_encode(&cells, 5);
        assert_eq!(runs, vec![[0, 1, 2], [0, 4, 1], [1, 0, 5]]);
        assert_eq!(rle_decode(&runs, 3, 5).unwrap(), cells);
    }

    #[test]
    fn rle_rejects_bad_runs() {
        assert_eq!(rle_decode(&[[3, 0, 1]], 3, 5).unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(rle_decode(&[[0, 4, 2]], 3, 5).unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(rle_decode(&[[0, 1, usize::MAX]], 3, 5).unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(rle_decode(&[[0, 1, 0]], 3, 5).unwrap_err().status, StatusCode::BAD_REQUEST);
    }
}
