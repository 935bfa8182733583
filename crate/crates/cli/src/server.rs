//! Review HTTP API.
//!
//! All state lives in the pipeline output directory: the server reads the
//! same artifacts the CLI writes and writes seeds and contours back with
//! atomic renames, so edits made here feed the next batch run.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use cmrfusion_core::pipeline::{artifacts, read_json, write_json, Pipeline, PipelineError, Stage};
use cmrfusion_core::segmentation::{ContourSet, Rect, SeedConfig, SliceContours};
use cmrfusion_core::volume::{container_stem, load_any};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Mutex;

use crate::png::{slice_png, Window};

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<Pipeline>,
    /// Serializes read-modify-write cycles on the seed and contour files.
    write_lock: Arc<Mutex<()>>,
}

impl AppState {
    pub fn new(pipeline: Pipeline) -> Self {
        AppState { pipeline: Arc::new(pipeline), write_lock: Arc::new(Mutex::new(())) }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::MissingArtifact { .. } => StatusCode::NOT_FOUND,
            PipelineError::Config(_) | PipelineError::Stage { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            PipelineError::Io { .. } | PipelineError::Json { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/volumes", get(list_volumes))
        .route("/api/volumes/{id}/slices/{k}", get(slice_image))
        .route("/api/seeds", get(get_seeds).put(put_seeds))
        .route("/api/segment/{slice}", post(segment_slice))
        .route("/api/contours", get(get_contours))
        .route("/api/scores", get(get_scores))
        .with_state(state)
}

pub async fn serve(pipeline: Pipeline, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    log::info!("serving {} on http://{}", pipeline.config.output_dir.display(), listener.local_addr()?);
    axum::serve(listener, router(AppState::new(pipeline))).await?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub phases: usize,
}

fn volume_files(p: &Pipeline) -> Vec<(String, PathBuf)> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(&p.config.output_dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.to_string_lossy().ends_with(".mvol.json"))
        .map(|p| (container_stem(&p), p))
        .collect();
    out.sort();
    out
}

fn header_info(id: String, path: &std::path::Path) -> Option<VolumeInfo> {
    let h: Value = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    let dims = serde_json::from_value(h.get("dims")?.clone()).ok()?;
    let spacing_mm = serde_json::from_value(h.get("spacing_mm")?.clone()).ok()?;
    let phases = h.get("payloads").and_then(Value::as_array).map_or(1, Vec::len);
    Some(VolumeInfo { id, dims, spacing_mm, phases })
}

async fn list_volumes(State(s): State<AppState>) -> ApiResult<Json<Vec<VolumeInfo>>> {
    let p = s.pipeline.clone();
    blocking(move || Ok(Json(volume_files(&p).into_iter().filter_map(|(id, path)| header_info(id, &path)).collect()))).await
}

#[derive(Debug, Default, Deserialize)]
pub struct SliceQuery {
    pub window: Option<f64>,
    pub level: Option<f64>,
    pub phase: Option<usize>,
}

async fn slice_image(State(s): State<AppState>, Path((id, k)): Path<(String, usize)>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    let p = s.pipeline.clone();
    blocking(move || {
        let path = volume_files(&p)
            .into_iter()
            .find(|(v, _)| *v == id)
            .map(|(_, path)| path)
            .ok_or_else(|| ApiError::not_found(format!("unknown volume {id:?}")))?;
        let stored = load_any(&path).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let t = q.phase.unwrap_or(0);
        let vol = stored.phase(t).ok_or_else(|| ApiError::not_found(format!("volume {id:?} has no phase {t}")))?;
        let [nx, ny, nz] = vol.dims();
        if k >= nz {
            return Err(ApiError::not_found(format!("volume {id:?} has {nz} slices, no slice {k}")));
        }
        let window = match (q.window, q.level) {
            (None, None) => None,
            (w, l) => {
                let auto = Window::auto(vol.slice(k).iter().map(|&v| v as f64));
                let w = Window { width: w.unwrap_or(auto.width), level: l.unwrap_or(auto.level) };
                if !(w.width > 0.0) || !w.level.is_finite() {
                    return Err(ApiError::unprocessable("window must be > 0 and level finite"));
                }
                Some(w)
            }
        };
        let values: Vec<f64> = vol.slice(k).iter().map(|&v| v as f64).collect();
        let png = slice_png(nx, ny, &values, window);
        Ok(Response::builder().header(header::CONTENT_TYPE, "image/png").body(Body::from(png)).expect("static headers"))
    })
    .await
}

async fn get_seeds(State(s): State<AppState>) -> ApiResult<Json<SeedConfig>> {
    let p = s.pipeline.clone();
    blocking(move || Ok(Json(p.load_seeds(Stage::Segment)?))).await
}

/// Grid dims and pixel size the seeds are checked against.
fn seed_grid(p: &Pipeline) -> ApiResult<([usize; 3], f64)> {
    let avg = p.out(artifacts::CINE_AVG);
    let path = if avg.exists() { avg } else { p.cine_path() };
    let info = header_info(String::new(), &path)
        .ok_or_else(|| ApiError::not_found(format!("no readable volume at {}; run `cmrfusion phantom` or `cmrfusion sync` first", path.display())))?;
    Ok((info.dims, info.spacing_mm[0]))
}

async fn put_seeds(State(s): State<AppState>, Json(seeds): Json<SeedConfig>) -> ApiResult<Json<SeedConfig>> {
    let p = s.pipeline.clone();
    let _guard = s.write_lock.lock().await;
    blocking(move || {
        let (dims, pixel_mm) = seed_grid(&p)?;
        seeds.validate(dims, pixel_mm).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        write_json(&p.seeds_path(), &seeds)?;
        Ok(Json(seeds))
    })
    .await
}

/// Overrides for one segmentation run; omitted fields keep the stored
/// seed values.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub lambda: Option<usize>,
    pub mask_inner_px: Option<f64>,
    pub mask_outer_mm: Option<f64>,
    pub convex_hull: Option<bool>,
    /// Only compute; leave the seed and contour files untouched.
    #[serde(default)]
    pub preview: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub contours: SliceContours,
    pub roi: Rect,
    /// Filtered ROI image as a base64 PNG.
    pub filtered_png: String,
}

async fn segment_slice(State(s): State<AppState>, Path(slice): Path<usize>, body: Option<Json<SegmentRequest>>) -> ApiResult<Json<SegmentResponse>> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let p = s.pipeline.clone();
    let _guard = s.write_lock.lock().await;
    blocking(move || {
        let mut seeds = p.load_seeds(Stage::Segment)?;
        let entry = seeds.slices.iter_mut().find(|e| e.slice == slice).ok_or_else(|| ApiError::not_found(format!("no seeds for slice {slice}")))?;
        if let Some(l) = req.lambda {
            entry.lambda = Some(l);
        }
        if let Some(v) = req.mask_inner_px {
            entry.mask_inner_px = v;
        }
        if let Some(v) = req.mask_outer_mm {
            entry.mask_outer_mm = v;
        }
        if let Some(v) = req.convex_hull {
            entry.convex_hull = v;
        }
        let entry = entry.clone();
        let image = cmrfusion_core::volume::load_volume(&p.out(artifacts::CINE_AVG)).map_err(|e| {
            ApiError::not_found(format!("{e}; run `cmrfusion sync` first"))
        })?;
        entry.validate(image.dims()[0], image.dims()[1], image.geometry().spacing[0]).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let preview = p.segment_preview(&image, &entry)?;
        if !req.preview {
            write_json(&p.seeds_path(), &seeds)?;
            let path = p.out(artifacts::CONTOURS);
            let mut set: ContourSet = if path.exists() { read_json(&path)? } else { ContourSet::default() };
            match set.slices.iter_mut().find(|c| c.slice == slice) {
                Some(c) => *c = preview.contours.clone(),
                None => {
                    set.slices.push(preview.contours.clone());
                    set.slices.sort_by_key(|c| c.slice);
                }
            }
            write_json(&path, &set)?;
        }
        let png = slice_png(preview.filtered.width, preview.filtered.height, &preview.filtered.data, None);
        Ok(Json(SegmentResponse {
            contours: preview.contours,
            roi: preview.roi,
            filtered_png: base64::engine::general_purpose::STANDARD.encode(png),
        }))
    })
    .await
}

fn artifact_json(p: &Pipeline, name: &str, producer: &str) -> ApiResult<Json<Value>> {
    let path = p.out(name);
    if !path.exists() {
        return Err(ApiError::not_found(format!("{} not found; run `cmrfusion {producer}` first", path.display())));
    }
    Ok(Json(read_json(&path)?))
}

async fn get_contours(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let p = s.pipeline.clone();
    blocking(move || artifact_json(&p, artifacts::CONTOURS, "segment")).await
}

async fn get_scores(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let p = s.pipeline.clone();
    blocking(move || artifact_json(&p, artifacts::SCORES, "mie")).await
}
