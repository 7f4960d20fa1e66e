//! REST backend over the classifier, the autoencoder and the explainer.
//!
//! Models and data are read once at startup and shared read-only between handlers. The job table
//! is the only mutable state. Explanations run on blocking worker threads, are seeded from the
//! instance id and are cached on disk, so repeated requests return the same bytes.

mod state;
mod routes;
pub mod schemas;

pub use routes::router;
pub use state::{AppState, JobState, JobStatus, ServiceConfig};

use std::net::SocketAddr;

/// Loads state from `config` and serves until the process is stopped.
pub async fn serve(config: ServiceConfig, port: u16) -> lxl_core::Result<()> {
    let state = AppState::load(config);
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
