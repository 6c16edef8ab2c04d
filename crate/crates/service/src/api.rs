use std::io::Cursor;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use slicevol_core::rle::{rle_decode, rle_encode};
use slicevol_core::{dice, PropagateOptions, RleMask};

use crate::store::{JobState, Store, StoreError};

type Shared = State<Arc<Store>>;

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        let status = match &self {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::BadRequest(_) => StatusCode::BAD_REQUEST,
            StoreError::Conflict(_) => StatusCode::CONFLICT,
            StoreError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            StoreError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub volume_id: String,
    /// `[height, width, depth]`.
    pub dims: [usize; 3],
    #[serde(default)]
    pub groundtruth: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub seed_index: usize,
    pub seed_mask: RleMask,
    #[serde(default)]
    pub options: PropagateOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub job_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub volume_id: String,
    pub state: JobState,
    /// Fraction of slices completed, in [0, 1].
    pub progress: f64,
    pub completed: usize,
    pub total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub dice_per_slice: Vec<f64>,
    pub volume_dice: f64,
    pub slices_per_second: f64,
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StoreError> + Send + 'static,
) -> Result<T, StoreError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(StoreError::Unavailable(format!("task failed: {e}"))))
}

pub(crate) async fn upload_volume(State(store): Shared, body: Bytes) -> Result<impl IntoResponse, StoreError> {
    let (id, (h, w, d)) = blocking(move || store.add_volume(&body)).await?;
    Ok((
        StatusCode::CREATED,
        Json(VolumeInfo {
            volume_id: id,
            dims: [h, w, d],
            groundtruth: false,
        }),
    ))
}

pub(crate) async fn get_volume(State(store): Shared, Path(id): Path<String>) -> Result<Json<VolumeInfo>, StoreError> {
    let v = store.volume(&id)?;
    let (h, w, d) = v.dims();
    Ok(Json(VolumeInfo {
        groundtruth: store.groundtruth(&id)?.is_some(),
        volume_id: id,
        dims: [h, w, d],
    }))
}

pub(crate) async fn slice_png(
    State(store): Shared,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, StoreError> {
    let k: usize = file
        .strip_suffix(".png")
        .unwrap_or(&file)
        .parse()
        .map_err(|_| StoreError::BadRequest(format!("bad slice index {file:?}")))?;
    let volume = store.volume(&id)?;
    if k >= volume.depth() {
        return Err(StoreError::NotFound(format!("slice {k} of volume {id}")));
    }
    let png = blocking(move || {
        let values = volume.slice_values(k)?;
        let pixels: Vec<u8> = values.iter().map(|&v| to_gray(v)).collect();
        let img = image::GrayImage::from_raw(volume.width() as u32, volume.height() as u32, pixels)
            .ok_or_else(|| StoreError::BadRequest("slice buffer size".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| StoreError::BadRequest(format!("png encoding: {e}")))?;
        Ok(out.into_inner())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// Linear map of [0, 1] to 0..=255.
pub fn to_gray(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) async fn upload_groundtruth(
    State(store): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<StatusCode, StoreError> {
    blocking(move || store.set_groundtruth(&id, &body)).await?;
    Ok(StatusCode::NO_CONTENT)
}

pub(crate) async fn submit_job(
    State(store): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, StoreError> {
    let req: SubmitRequest =
        serde_json::from_slice(&body).map_err(|e| StoreError::BadRequest(format!("invalid request: {e}")))?;
    let seed = rle_decode(&req.seed_mask).map_err(|e| StoreError::BadRequest(e.to_string()))?;
    let job_id = store.submit(&id, req.seed_index, seed, req.options)?;
    Ok((StatusCode::ACCEPTED, Json(SubmitResponse { job_id })))
}

pub(crate) async fn job_status(State(store): Shared, Path(id): Path<String>) -> Result<Json<JobStatus>, StoreError> {
    let job = store.job(&id)?;
    Ok(Json(JobStatus {
        progress: job.progress(),
        job_id: job.job_id,
        volume_id: job.volume_id,
        state: job.state,
        completed: job.completed,
        total: job.total,
        error: job.error,
    }))
}

pub(crate) async fn job_mask(
    State(store): Shared,
    Path((id, k)): Path<(String, String)>,
) -> Result<Json<RleMask>, StoreError> {
    let k: usize = k
        .parse()
        .map_err(|_| StoreError::BadRequest(format!("bad slice index {k:?}")))?;
    let (_, masks) = store.job_result(&id)?;
    let plane = masks
        .plane(k)
        .map_err(|_| StoreError::NotFound(format!("slice {k} of job {id}")))?;
    Ok(Json(rle_encode(plane)))
}

pub(crate) async fn job_metrics(
    State(store): Shared,
    Path(id): Path<String>,
) -> Result<Json<MetricsResponse>, StoreError> {
    let (job, masks) = store.job_result(&id)?;
    let gt = store
        .groundtruth(&job.volume_id)?
        .ok_or_else(|| StoreError::NotFound(format!("groundtruth for volume {}", job.volume_id)))?;
    let per = masks
        .planes()
        .iter()
        .zip(gt.planes())
        .map(|(a, b)| dice(a, b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(MetricsResponse {
        dice_per_slice: per,
        volume_dice: dice(masks.as_ref(), gt.as_ref())?,
        slices_per_second: job.summary.map_or(f64::NAN, |s| s.slices_per_second),
    }))
}
