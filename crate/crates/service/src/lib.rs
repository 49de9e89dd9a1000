//! HTTP front end and command line tools for the dating service.

pub mod api;
pub mod config;
pub mod state;
pub mod tools;

use std::sync::Arc;

pub use api::{router, DatingResponse};
pub use config::ServiceConfig;
pub use state::AppState;

/// Binds `config.listen` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let listen = config.listen;
    let state = Arc::new(AppState::new(config)?);
    {
        let snap = state.snapshot();
        match &snap.model {
            Some(m) => tracing::info!(model = %m.descriptor(), "model loaded"),
            None => tracing::warn!(reason = snap.model_error.as_deref().unwrap_or("unknown"), "model not loaded"),
        }
        tracing::info!(artifacts = snap.store.snapshot().len(), indexed = snap.index.len(), "catalog opened");
    }
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
