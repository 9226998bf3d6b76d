//! HTTP inference service: `POST /colorize`, `POST /recommend` and
//! `GET /health` over a loaded checkpoint and optional texture library.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hintcolor::colorspace::{format_hex_color, lab_to_srgb, parse_hex_color, rgb_to_lab, srgb_to_normalized_ab, RgbImage};
use hintcolor::hints::{LocalInput, Theme};
use hintcolor::network::{checkpoint_id, ModelConfig};
use hintcolor::recommender::{recommend_themes, GrayImage, TextureLibrary};
use hintcolor::Model32;

/// Largest accepted width or height.
pub const MAX_SIDE: usize = 1024;
const BODY_LIMIT: usize = 64 << 20;
const ALTERNATES: usize = 2;

pub struct ServiceState {
    model: Model32,
    model_id: String,
    library: Option<TextureLibrary>,
}

impl ServiceState {
    pub fn new(model: Model32, model_id: String, library: Option<TextureLibrary>) -> Self {
        ServiceState { model, model_id, library }
    }

    /// Loads a checkpoint (identified by a hash of its bytes) and an
    /// optional library.
    pub fn load(checkpoint: &Path, library: Option<&Path>) -> hintcolor::Result<Self> {
        let bytes = std::fs::read(checkpoint).map_err(|e| hintcolor::Error::Io { path: checkpoint.to_path_buf(), source: e })?;
        let (model, _, _) = Model32::from_checkpoint_bytes(&bytes)?;
        let library = library.map(TextureLibrary::load).transpose()?;
        Ok(ServiceState::new(model, checkpoint_id(&bytes), library))
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// A theme or hint color: `"#rrggbb"` or a normalised `[a, b]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColorSpec {
    Hex(String),
    Ab([f64; 2]),
}

impl ColorSpec {
    fn to_ab(&self, field: &str) -> Result<[f64; 2], ApiError> {
        match self {
            ColorSpec::Hex(s) => parse_hex_color(s).map(srgb_to_normalized_ab).map_err(|e| ApiError::bad(format!("{field}: {e}"))),
            ColorSpec::Ab(ab) if ab.iter().all(|v| (0.0..=1.0).contains(v)) => Ok(*ab),
            ColorSpec::Ab(ab) => Err(ApiError::bad(format!("{field}: ab {ab:?} outside [0, 1]"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintSpec {
    pub x: usize,
    pub y: usize,
    pub color: ColorSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorizeRequest {
    /// Base64 PNG; only its luminance is used.
    pub image: String,
    #[serde(default)]
    pub theme: Option<Vec<ColorSpec>>,
    #[serde(default)]
    pub hints: Vec<HintSpec>,
    /// Must match the loaded model id when given.
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedHint {
    pub x: usize,
    pub y: usize,
    pub ab: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColorizeResponse {
    /// Base64 PNG.
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub theme: Option<Vec<[f64; 2]>>,
    pub hints: Vec<AppliedHint>,
    pub model: String,
    pub duration_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub image: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestedTheme {
    pub colors: Vec<[f64; 2]>,
    /// Each color rendered at L = 50.
    pub hex: Vec<String>,
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub theme: SuggestedTheme,
    pub alternates: Vec<SuggestedTheme>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub model: String,
    pub config: ModelConfig,
    pub version: String,
    pub library: bool,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("invalid request body: {e}")))
}

fn decode_image(field: &str, data: &str) -> Result<RgbImage, ApiError> {
    let bytes = BASE64.decode(data.trim()).map_err(|e| ApiError::bad(format!("{field}: invalid base64: {e}")))?;
    let (w, h) = RgbImage::png_dimensions(&bytes).map_err(|e| ApiError::bad(format!("{field}: not a PNG: {e}")))?;
    if w > MAX_SIDE || h > MAX_SIDE {
        return Err(ApiError {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            message: format!("{field}: {w}x{h} exceeds the {MAX_SIDE}x{MAX_SIDE} limit"),
        });
    }
    RgbImage::from_png_bytes(&bytes).map_err(|e| ApiError::bad(format!("{field}: {e}")))
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string() }
}

/// Runs one colorize request synchronously.
pub fn colorize(state: &ServiceState, req: &ColorizeRequest) -> Result<ColorizeResponse, ApiError> {
    let start = Instant::now();
    if let Some(m) = &req.model {
        if *m != state.model_id {
            return Err(ApiError::bad(format!("model: `{m}` is not loaded (serving `{}`)", state.model_id)));
        }
    }
    let image = decode_image("image", &req.image)?;
    let (w, h) = (image.width(), image.height());
    let theme = match &req.theme {
        Some(colors) => {
            let ab = colors
                .iter()
                .enumerate()
                .map(|(i, c)| c.to_ab(&format!("theme[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            Some(Theme::new(ab).map_err(|e| ApiError::bad(format!("theme: {e}")))?)
        }
        None => None,
    };
    let mut local = LocalInput::empty(w, h);
    let mut applied = Vec::with_capacity(req.hints.len());
    for (i, hint) in req.hints.iter().enumerate() {
        let ab = hint.color.to_ab(&format!("hints[{i}].color"))?;
        if hint.x >= w || hint.y >= h {
            return Err(ApiError::bad(format!("hints[{i}]: ({}, {}) outside the {w}x{h} image", hint.x, hint.y)));
        }
        local.set(hint.x, hint.y, ab).map_err(|e| ApiError::bad(format!("hints[{i}]: {e}")))?;
        applied.push(AppliedHint { x: hint.x, y: hint.y, ab });
    }
    let hints = (!applied.is_empty()).then_some(&local);
    let out = state.model.colorize(&rgb_to_lab(&image), theme.as_ref(), hints).map_err(internal)?;
    let png = out.to_png_bytes().map_err(internal)?;
    Ok(ColorizeResponse {
        image: BASE64.encode(png),
        width: w,
        height: h,
        theme: theme.map(|t| t.colors().to_vec()),
        hints: applied,
        model: state.model_id.clone(),
        duration_seconds: start.elapsed().as_secs_f64(),
    })
}

fn suggested(theme: &Theme, padded: bool) -> SuggestedTheme {
    let hex = theme
        .colors()
        .iter()
        .map(|&[a, b]| format_hex_color(lab_to_srgb([50.0, a * 255.0 - 128.0, b * 255.0 - 128.0])))
        .collect();
    SuggestedTheme { colors: theme.colors().to_vec(), hex, padded }
}

/// Runs one recommend request synchronously.
pub fn recommend(state: &ServiceState, req: &RecommendRequest) -> Result<RecommendResponse, ApiError> {
    let library = state.library.as_ref().ok_or_else(|| ApiError {
        status: StatusCode::SERVICE_UNAVAILABLE,
        message: "no texture library loaded".into(),
    })?;
    let image = decode_image("image", &req.image)?;
    let recs = recommend_themes(&GrayImage::from_rgb(&image), library, req.k, ALTERNATES)
        .map_err(|e| ApiError::bad(format!("k: {e}")))?;
    let mut themes = recs.iter().map(|r| suggested(&r.theme, r.padded()));
    let theme = themes.next().expect("at least one recommendation");
    Ok(RecommendResponse { theme, alternates: themes.collect() })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

async fn colorize_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<ColorizeResponse>, ApiError> {
    let req: ColorizeRequest = parse_body(&body)?;
    let res = blocking(move || colorize(&state, &req)).await?;
    log::info!("colorize {}x{} in {:.3}s", res.width, res.height, res.duration_seconds);
    Ok(Json(res))
}

async fn recommend_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<RecommendResponse>, ApiError> {
    let req: RecommendRequest = parse_body(&body)?;
    Ok(Json(blocking(move || recommend(&state, &req)).await?))
}

async fn health_handler(State(state): State<Arc<ServiceState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        model: state.model_id.clone(),
        config: *state.model.config(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        library: state.library.is_some(),
    })
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/colorize", post(colorize_handler))
        .route("/recommend", post(recommend_handler))
        .route("/health", get(health_handler))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving model {} on {}", state.model_id, listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
