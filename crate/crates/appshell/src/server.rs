//! JSON-over-HTTP service driving interactive scribble sessions.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/session` | multipart, field `image` (PNG) | `{session_id, preview}` |
//! | PUT | `/session/{id}/params` | partial config object | effective config |
//! | PUT | `/session/{id}/scribbles` | RLE scribbles | stroke counts |
//! | POST | `/session/{id}/render` | `{"mode": "filter" \| "fb" \| "recolor" \| "mask"}` | PNG |
//! | GET | `/session/{id}/matrix?which=total\|foreground\|background` | | matrix dump |
//! | DELETE | `/session/{id}` | | 204 |
//!
//! Errors are `{"error": message}` with 400 for malformed bodies, 404 for
//! unknown sessions, 409 when a mode needs scribbles that are missing, 413 for
//! images above 16 MP and 422 when processing fails.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use base64::Engine;
use cofkit_core::filter::Stroke;
use cofkit_core::io::{decode_image, peek_dimensions};
use serde::Deserialize;
use serde_json::json;

use crate::config::{PipelineConfig, PATH_KEYS};
use crate::scribble::{decode_rle, RleScribbles, MAX_PIXELS};
use crate::session::{RenderMode, Session, SessionError, SessionStore, SharedSession};

/// Upload bodies may carry a full 16 MP image.
pub const BODY_LIMIT: usize = 256 * 1024 * 1024;

pub const TIMING_HEADER: &str = "x-render-ms";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub defaults: PipelineConfig,
}

impl AppState {
    pub fn new(defaults: PipelineConfig) -> Self {
        Self {
            store: Arc::new(SessionStore::default()),
            defaults,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", delete(delete_session))
        .route("/session/{id}/params", put(put_params))
        .route("/session/{id}/scribbles", put(put_scribbles))
        .route("/session/{id}/render", post(render))
        .route("/session/{id}/matrix", get(get_matrix))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, defaults: PipelineConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(defaults))).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::NoForeground(_) => StatusCode::CONFLICT,
            SessionError::Config(_) | SessionError::ScribbleSize { .. } => StatusCode::BAD_REQUEST,
            SessionError::Pipeline(_) | SessionError::Encode(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lookup(state: &AppState, id: &str) -> ApiResult<SharedSession> {
    state
        .store
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
}

/// Runs CPU-bound session work off the async executor while holding the
/// session lock.
async fn with_session<T: Send + 'static>(
    session: SharedSession,
    work: impl FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
) -> ApiResult<T> {
    let mut guard = session.lock_owned().await;
    tokio::task::spawn_blocking(move || work(&mut guard))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn create_session(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut upload = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(e.status(), e.body_text()))?
    {
        if field.name() == Some("image") {
            upload = Some(
                field
                    .bytes()
                    .await
                    .map_err(|e| ApiError::new(e.status(), e.body_text()))?,
            );
        }
    }
    let bytes = upload.ok_or_else(|| ApiError::bad_request("multipart field `image` is missing"))?;
    let (w, h) = peek_dimensions(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if w.saturating_mul(h) > MAX_PIXELS {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("{w}x{h} exceeds the {MAX_PIXELS} pixel limit"),
        ));
    }
    let image = decode_image(&bytes, "upload").map_err(|e| ApiError::bad_request(e.to_string()))?;
    let session: SharedSession = Arc::new(tokio::sync::Mutex::new(Session::new(image, state.defaults.clone())));
    let preview = with_session(session.clone(), |s| s.preview()).await?;
    let session = Arc::try_unwrap(session)
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "session still shared"))?
        .into_inner();
    let id = state.store.insert(session);
    Ok(Json(json!({
        "session_id": id,
        "width": w,
        "height": h,
        "preview": base64::engine::general_purpose::STANDARD.encode(preview),
    }))
    .into_response())
}

async fn put_params(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let patch: serde_json::Value = parse_json(&body)?;
    if let Some(obj) = patch.as_object() {
        if let Some(key) = PATH_KEYS.iter().find(|k| obj.contains_key(**k)) {
            return Err(ApiError::bad_request(format!("`{key}` cannot be set over HTTP")));
        }
    }
    let mut guard = session.lock().await;
    let cfg = guard
        .config()
        .merged(&patch)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    guard.set_config(cfg.clone());
    Ok(Json(cfg).into_response())
}

async fn put_scribbles(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let rle: RleScribbles = parse_json(&body)?;
    let scribbles = decode_rle(&rle).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let counts = json!({
        "foreground": scribbles.count(Stroke::Foreground),
        "background": scribbles.count(Stroke::Background),
    });
    session.lock().await.set_scribbles(scribbles)?;
    Ok(Json(counts).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    mode: RenderMode,
}

async fn render(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let req: RenderRequest = parse_json(&body)?;
    let rendered = with_session(session, move |s| s.render(req.mode)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::HeaderName::from_static(TIMING_HEADER), format!("{:.3}", rendered.millis)),
            (
                header::HeaderName::from_static("server-timing"),
                format!("render;dur={:.3}", rendered.millis),
            ),
        ],
        rendered.png,
    )
        .into_response())
}

#[derive(Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Which {
    #[default]
    Total,
    Foreground,
    Background,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixQuery {
    #[serde(default)]
    which: Which,
}

async fn get_matrix(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MatrixQuery>,
) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let text = with_session(session, move |s| {
        let stats = match q.which {
            Which::Total => s.total()?.clone(),
            Which::Foreground => s.selection(RenderMode::Mask)?.foreground.clone(),
            Which::Background => s.selection(RenderMode::Mask)?.background.clone(),
        };
        let palette = &s.guidance()?.palette;
        Ok(stats.dump(palette).to_json())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    if state.store.remove(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }
}
