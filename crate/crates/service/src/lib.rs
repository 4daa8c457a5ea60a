//! Classification service: serves the active model over HTTP, stores
//! consented images for dataset curation, and manages installed models.

mod api;
mod error;
pub mod models;
pub mod store;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{router, AppState, ClassifyOptions, ClassifyResponse, Health};
pub use error::ServiceError;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;
pub const DEFAULT_MAX_MODEL_BYTES: usize = 512 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub store_root: PathBuf,
    pub max_upload_bytes: usize,
    pub max_model_bytes: usize,
    /// Exact CORS origin of the UI; any origin when unset.
    pub allowed_origin: Option<String>,
}

impl ServiceConfig {
    pub fn new(listen: SocketAddr, store_root: PathBuf) -> Self {
        Self {
            listen,
            store_root,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            max_model_bytes: DEFAULT_MAX_MODEL_BYTES,
            allowed_origin: None,
        }
    }
}

/// Bind and serve until `shutdown` resolves, then finish in-flight requests.
pub async fn serve(
    config: ServiceConfig,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, &config))
        .with_graceful_shutdown(shutdown)
        .await
}
