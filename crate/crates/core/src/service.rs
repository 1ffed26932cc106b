//! HTTP inpainting API.
//!
//! * `POST /api/v1/inpaint`: regenerate a contiguous block of measures.
//! * `GET /api/v1/model`: checkpoint hashes, dimensions, vocabulary size.
//! * `GET /api/v1/health`: liveness plus whether a model is loaded.
//!
//! Errors are `{"code", "message", "field"}` with status 400 (bad request)
//! or 503 (no model yet). Inference time is reported in the
//! `x-inference-time-ms` header so that response bodies depend only on the
//! request and seed.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_inpaint, CheckpointError};
use crate::codec::{Vocabulary, TOKENS_PER_MEASURE};
use crate::latent::{ContextMode, InpaintNet, LatentRnnConfig, SplitSpec};
use crate::nn::{Ctx, RngStream};
use crate::vae::{Decoding, VaeConfig, ZMode};

pub const MAX_MEASURES: usize = 256;
pub const MAX_SAMPLES: usize = 64;
pub const TIMING_HEADER: &str = "x-inference-time-ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub inpaint_sha256: String,
    pub vae_sha256: String,
    pub vocab_size: usize,
    pub mode: ContextMode,
    pub vae: VaeConfig,
    pub latent: LatentRnnConfig,
    pub train: serde_json::Value,
}

pub struct LoadedModel {
    pub net: InpaintNet<f32>,
    pub vocab: Vocabulary,
    pub info: ModelInfo,
}

impl LoadedModel {
    pub fn from_checkpoint(path: &Path) -> Result<Self, CheckpointError> {
        let l = load_inpaint(path)?;
        let info = ModelInfo {
            inpaint_sha256: l.sha256,
            vae_sha256: l.vae_sha256,
            vocab_size: l.vocab.len(),
            mode: l.net.mode(),
            vae: l.net.vae.config().clone(),
            latent: l.net.rnn.config().clone(),
            train: l.header.train,
        };
        Ok(Self {
            net: l.net,
            vocab: l.vocab,
            info,
        })
    }
}

/// Load-once model slot shared by all handlers.
#[derive(Clone, Default)]
pub struct AppState {
    slot: Arc<OnceLock<Arc<LoadedModel>>>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_model(model: LoadedModel) -> Self {
        let s = Self::empty();
        s.install(model);
        s
    }

    /// Returns false if a model was already installed.
    pub fn install(&self, model: LoadedModel) -> bool {
        self.slot.set(Arc::new(model)).is_ok()
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.slot.get().cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRange {
    pub start_measure: usize,
    pub count: usize,
}

/// A mask is a `{start_measure, count}` block or an explicit list of
/// measure indices, which must then be contiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Indices(Vec<usize>),
    Range(MaskRange),
}

fn default_samples() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub measures: Vec<Vec<String>>,
    pub mask: MaskSpec,
    #[serde(default = "default_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub z_mode: Option<ZMode>,
    #[serde(default)]
    pub decoding: Option<Decoding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintSample {
    pub seed: u64,
    pub measures: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIds {
    pub inpaint_sha256: String,
    pub vae_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub samples: Vec<InpaintSample>,
    pub mask: MaskRange,
    pub z_mode: ZMode,
    pub decoding: Decoding,
    pub model: ModelIds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    fn bad(code: &str, message: impl Into<String>, field: Option<String>) -> Self {
        Self {
            status: 400,
            code: code.into(),
            message: message.into(),
            field,
        }
    }

    fn not_loaded() -> Self {
        Self {
            status: 503,
            code: "model_not_loaded".into(),
            message: "no model is loaded yet".into(),
            field: None,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: 500,
            code: "internal".into(),
            message: message.into(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Resolve and check the mask against a score of `n` measures.
pub fn validate_mask(mask: &MaskSpec, n: usize) -> Result<MaskRange, ApiError> {
    let range = match mask {
        MaskSpec::Range(r) => *r,
        MaskSpec::Indices(ix) => {
            let Some(&start) = ix.first() else {
                return Err(ApiError::bad("invalid_mask", "mask lists no measures", Some("mask".into())));
            };
            if ix.iter().enumerate().any(|(k, &m)| m != start + k) {
                return Err(ApiError::bad(
                    "invalid_mask",
                    "mask must be one contiguous, ascending block of measures",
                    Some("mask".into()),
                ));
            }
            MaskRange {
                start_measure: start,
                count: ix.len(),
            }
        }
    };
    if range.count == 0 {
        return Err(ApiError::bad("invalid_mask", "mask count must be at least 1", Some("mask.count".into())));
    }
    if range.start_measure == 0 {
        return Err(ApiError::bad(
            "invalid_mask",
            "mask may not cover measure 0: at least one past measure is required",
            Some("mask.start_measure".into()),
        ));
    }
    if range.start_measure + range.count > n.saturating_sub(1) {
        return Err(ApiError::bad(
            "invalid_mask",
            format!(
                "mask {}..{} leaves no future measure in a score of {n}",
                range.start_measure,
                range.start_measure + range.count
            ),
            Some("mask".into()),
        ));
    }
    Ok(range)
}

/// Pure request handler: validation, inference and splicing.
pub fn run_inpaint(model: &LoadedModel, req: &InpaintRequest) -> Result<InpaintResponse, ApiError> {
    let n = req.measures.len();
    if !(3..=MAX_MEASURES).contains(&n) {
        return Err(ApiError::bad(
            "invalid_measures",
            format!("score must have between 3 and {MAX_MEASURES} measures, got {n}"),
            Some("measures".into()),
        ));
    }
    let mut ids = Vec::with_capacity(n);
    for (m, measure) in req.measures.iter().enumerate() {
        if measure.len() != TOKENS_PER_MEASURE {
            return Err(ApiError::bad(
                "wrong_measure_length",
                format!("measure {m} has {} tokens, expected {TOKENS_PER_MEASURE}", measure.len()),
                Some(format!("measures[{m}]")),
            ));
        }
        let mut row = Vec::with_capacity(TOKENS_PER_MEASURE);
        for (t, tok) in measure.iter().enumerate() {
            match model.vocab.id(tok) {
                Some(id) => row.push(id),
                None => {
                    return Err(ApiError::bad(
                        "unknown_token",
                        format!("token {tok:?} is not in the model vocabulary"),
                        Some(format!("measures[{m}][{t}]")),
                    ))
                }
            }
        }
        ids.push(row);
    }
    let mask = validate_mask(&req.mask, n)?;
    if !(1..=MAX_SAMPLES).contains(&req.num_samples) {
        return Err(ApiError::bad(
            "invalid_num_samples",
            format!("num_samples must be between 1 and {MAX_SAMPLES}"),
            Some("num_samples".into()),
        ));
    }
    let split = SplitSpec::new(mask.start_measure, mask.count, n - mask.start_measure - mask.count)
        .map_err(|e| ApiError::bad("invalid_mask", e.to_string(), Some("mask".into())))?;
    let z_mode = req.z_mode.unwrap_or(ZMode::Sample);
    let decoding = req.decoding.unwrap_or(Decoding::Sample);
    let base = req.seed.unwrap_or_else(rand::random);
    let mut samples = Vec::with_capacity(req.num_samples);
    for i in 0..req.num_samples {
        let seed = base.wrapping_add(i as u64);
        let mut rng = RngStream::new(seed);
        let out = model
            .net
            .inpaint_forward(&ids, split, false, z_mode, decoding, &mut Ctx::eval(&mut rng))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let mut measures = req.measures.clone();
        for (k, toks) in out.tokens.iter().enumerate() {
            measures[mask.start_measure + k] = model
                .vocab
                .decode(toks)
                .map_err(|e| ApiError::internal(e.to_string()))?;
        }
        samples.push(InpaintSample { seed, measures });
    }
    Ok(InpaintResponse {
        samples,
        mask,
        z_mode,
        decoding,
        model: ModelIds {
            inpaint_sha256: model.info.inpaint_sha256.clone(),
            vae_sha256: model.info.vae_sha256.clone(),
        },
    })
}

async fn inpaint(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let model = state.model().ok_or_else(ApiError::not_loaded)?;
    let req: InpaintRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad("invalid_json", e.to_string(), None))?;
    let start = Instant::now();
    let resp = tokio::task::spawn_blocking(move || run_inpaint(&model, &req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut r = Json(resp).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("{ms:.3}")) {
        r.headers_mut().insert(TIMING_HEADER, v);
    }
    Ok(r)
}

async fn model_info(State(state): State<AppState>) -> Result<Json<ModelInfo>, ApiError> {
    let model = state.model().ok_or_else(ApiError::not_loaded)?;
    Ok(Json(model.info.clone()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_loaded: state.model().is_some(),
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/inpaint", post(inpaint))
        .route("/api/v1/model", get(model_info))
        .route("/api/v1/health", get(health))
        .with_state(state)
}

/// Bind, start loading `checkpoint` in the background and serve until
/// interrupted. Requests get 503 until loading finishes.
pub async fn serve(addr: SocketAddr, checkpoint: PathBuf) -> anyhow::Result<()> {
    let state = AppState::empty();
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match LoadedModel::from_checkpoint(&checkpoint) {
        Ok(m) => {
            log::info!("loaded {} ({})", checkpoint.display(), m.info.inpaint_sha256);
            loader.install(m);
        }
        Err(e) => log::error!("failed to load {}: {e}", checkpoint.display()),
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rules() {
        let r = |s, c| MaskSpec::Range(MaskRange { start_measure: s, count: c });
        assert!(validate_mask(&r(1, 14), 16).is_ok());
        assert_eq!(validate_mask(&r(0, 2), 16).unwrap_err().field.as_deref(), Some("mask.start_measure"));
        assert!(validate_mask(&r(2, 14), 16).is_err());
        assert!(validate_mask(&r(3, 0), 16).is_err());
        assert_eq!(
            validate_mask(&MaskSpec::Indices(vec![4, 5, 6]), 16).unwrap(),
            MaskRange { start_measure: 4, count: 3 }
        );
        assert_eq!(validate_mask(&MaskSpec::Indices(vec![4, 6]), 16).unwrap_err().code, "invalid_mask");
        assert!(validate_mask(&MaskSpec::Indices(vec![]), 16).is_err());
    }

    #[test]
    fn request_defaults() {
        let req: InpaintRequest = serde_json::from_str(r#"{"measures": [], "mask": {"start_measure": 1, "count": 2}}"#).unwrap();
        assert_eq!(req.num_samples, 1);
        assert_eq!(req.seed, None);
        let req: InpaintRequest = serde_json::from_str(r#"{"measures": [], "mask": [3, 4], "z_mode": "mean"}"#).unwrap();
        assert_eq!(req.mask, MaskSpec::Indices(vec![3, 4]));
        assert_eq!(req.z_mode, Some(ZMode::Mean));
    }
}
