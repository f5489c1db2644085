use std::collections::BTreeMap;
use std::time::Duration;

use super::config::{BackendConfig, BackendKind};
use super::wire::{Endpoint, CONTENT_JSON, HEADER_CONTENT_SHA256};

#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub endpoint: Endpoint,
    /// JSON body.
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
    /// Value of the `x-content-sha256` header, when sent.
    pub content_sha256: Option<String>,
}

impl WireResponse {
    pub fn json(status: u16, value: &impl serde::Serialize) -> Self {
        WireResponse {
            status,
            content_type: CONTENT_JSON.to_string(),
            body: serde_json::to_vec(value).expect("wire payloads serialize"),
            content_sha256: None,
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// Failure below the protocol: the request never produced a response.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("transport failure on {endpoint}: {message}")]
pub struct TransportError {
    pub endpoint: Endpoint,
    pub message: String,
}

/// Moves one request to a backend and returns whatever it answered.
///
/// Implementations must not interpret status codes; retry policy lives in the
/// typed client.
pub trait Transport: Send + Sync {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, TransportError> {
        (**self).send(request)
    }
}

/// Blocking HTTP transport with one base URL and timeout per backend.
pub struct HttpTransport {
    agents: BTreeMap<BackendKind, (String, ureq::Agent)>,
}

impl HttpTransport {
    pub fn new(config: &BackendConfig) -> Self {
        let agents = BackendKind::ALL
            .into_iter()
            .map(|kind| {
                let ep = config.endpoint(kind);
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs_f64(ep.timeout_secs)))
                    .http_status_as_error(false)
                    .build()
                    .into();
                (kind, (ep.url.trim_end_matches('/').to_string(), agent))
            })
            .collect();
        HttpTransport { agents }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, TransportError> {
        let (base, agent) = &self.agents[&BackendKind::of(request.endpoint)];
        let url = format!("{base}{}", request.endpoint.path());
        let fail = |e: ureq::Error| TransportError {
            endpoint: request.endpoint,
            message: e.to_string(),
        };
        let mut response = agent
            .post(&url)
            .header("content-type", CONTENT_JSON)
            .send(&request.body[..])
            .map_err(fail)?;
        let header = |name: &str| {
            response
                .headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        };
        let content_type = header("content-type").unwrap_or_default();
        let content_sha256 = header(HEADER_CONTENT_SHA256);
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(fail)?;
        Ok(WireResponse {
            status,
            content_type,
            body,
            content_sha256,
        })
    }
}
