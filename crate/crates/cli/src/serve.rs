use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use storyboard_core::backend::sim::SimBackend;
use storyboard_core::backend::wire::{Endpoint, ErrorEnvelope, HEADER_CONTENT_SHA256};
use storyboard_core::backend::{WireRequest, WireResponse};

async fn dispatch(State(sim): State<Arc<SimBackend>>, uri: Uri, body: Bytes) -> Response {
    let wire = match Endpoint::from_path(uri.path()) {
        Some(endpoint) => {
            let request = WireRequest { endpoint, body: body.to_vec() };
            let sim = sim.clone();
            match tokio::task::spawn_blocking(move || sim.handle(&request)).await {
                Ok(r) => r,
                Err(e) => WireResponse::json(500, &ErrorEnvelope::new("internal", e.to_string())),
            }
        }
        None => WireResponse::json(404, &ErrorEnvelope::new("not_found", format!("no endpoint at {}", uri.path()))),
    };
    let mut headers = HeaderMap::new();
    if let Ok(v) = HeaderValue::from_str(&wire.content_type) {
        headers.insert(header::CONTENT_TYPE, v);
    }
    if let Some(v) = wire.content_sha256.as_deref().and_then(|h| HeaderValue::from_str(h).ok()) {
        headers.insert(HEADER_CONTENT_SHA256, v);
    }
    let status = StatusCode::from_u16(wire.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, headers, wire.body).into_response()
}

pub fn router(sim: Arc<SimBackend>) -> Router {
    Router::new().fallback(axum::routing::post(dispatch)).with_state(sim)
}

/// Serves `sim` until interrupted. Prints the bound address first.
pub fn serve(sim: SimBackend, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        log::info!("sim backend on {local}");
        axum::serve(listener, router(Arc::new(sim)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving")
    })
}
