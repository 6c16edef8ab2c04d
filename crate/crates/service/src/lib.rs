//! HTTP job service for slice-to-volume propagation.
//!
//! Volumes are uploaded as SVL1 bytes, propagation runs on a fixed pool of
//! worker threads, and results are fetched slice by slice as run-length
//! masks. With a data directory configured, volumes, ground truth and
//! finished results survive a restart.

mod api;
mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;

pub use api::{JobStatus, MetricsResponse, SubmitRequest, SubmitResponse, VolumeInfo};
pub use store::{JobRecord, JobState, ServiceConfig, Store, StoreError};

/// Largest accepted upload.
pub const MAX_BODY_BYTES: usize = 1 << 30;

pub fn router(store: Arc<Store>, ui_dir: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/volumes", post(api::upload_volume))
        .route("/volumes/{id}", get(api::get_volume))
        .route("/volumes/{id}/slices/{file}", get(api::slice_png))
        .route("/volumes/{id}/groundtruth", post(api::upload_groundtruth))
        .route("/volumes/{id}/jobs", post(api::submit_job))
        .route("/jobs/{id}", get(api::job_status))
        .route("/jobs/{id}/masks/{k}", get(api::job_mask))
        .route("/jobs/{id}/metrics", get(api::job_metrics))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.nest_service("/ui", tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Runs the service until ctrl-c.
pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let store = tokio::task::spawn_blocking({
        let cfg = cfg.clone();
        move || Store::open(&cfg)
    })
    .await??;
    if !store.has_model() {
        eprintln!("no model loaded; propagation requests will return 503");
    }
    let app = router(Arc::clone(&store), cfg.ui_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::spawn_blocking(move || store.shutdown()).await?;
    Ok(())
}
