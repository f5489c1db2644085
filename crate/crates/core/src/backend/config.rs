use serde::{Deserialize, Serialize};

use super::wire::Endpoint;

/// The five model services.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Chat,
    Embed,
    I2v,
    Track,
    Aesthetic,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::Chat,
        BackendKind::Embed,
        BackendKind::I2v,
        BackendKind::Track,
        BackendKind::Aesthetic,
    ];

    pub fn of(endpoint: Endpoint) -> BackendKind {
        match endpoint {
            Endpoint::Chat => BackendKind::Chat,
            Endpoint::Embed => BackendKind::Embed,
            Endpoint::I2vSubmit | Endpoint::I2vPoll | Endpoint::I2vFetch => BackendKind::I2v,
            Endpoint::Track => BackendKind::Track,
            Endpoint::Aesthetic => BackendKind::Aesthetic,
        }
    }

    /// Environment variable overriding this backend's URL.
    pub fn env_var(self) -> &'static str {
        match self {
            BackendKind::Chat => "BACKEND_CHAT_URL",
            BackendKind::Embed => "BACKEND_EMBED_URL",
            BackendKind::I2v => "BACKEND_I2V_URL",
            BackendKind::Track => "BACKEND_TRACK_URL",
            BackendKind::Aesthetic => "BACKEND_AESTHETIC_URL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first one on transport failures and 5xx.
    pub retry_budget: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_backoff_ms() -> u64 {
    500
}

impl EndpointConfig {
    fn new(model: &str, timeout_secs: f64) -> Self {
        EndpointConfig {
            url: "http://127.0.0.1:8080".to_string(),
            model: model.to_string(),
            timeout_secs,
            retry_budget: 2,
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct I2vConfig {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    pub poll_interval_secs: f64,
    /// Total time allowed for polling one job before giving up.
    pub poll_timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub chat: EndpointConfig,
    pub embed: EndpointConfig,
    pub i2v: I2vConfig,
    pub track: EndpointConfig,
    pub aesthetic: EndpointConfig,
    /// Command used to turn an MP4 fetch payload into PNG frames. `{input}` is
    /// replaced by the video path and `{outdir}` by the directory that must
    /// receive the frames (sorted by file name).
    #[serde(default)]
    pub decoder_command: Option<Vec<String>>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            chat: EndpointConfig::new("Qwen3VL-8B", 120.0),
            embed: EndpointConfig::new("Qwen3-Embedding-0.6B", 30.0),
            i2v: I2vConfig {
                endpoint: EndpointConfig::new("Wan2.2-I2V-14B", 60.0),
                poll_interval_secs: 5.0,
                poll_timeout_secs: 1800.0,
            },
            track: EndpointConfig::new("lightglue-cotracker", 300.0),
            aesthetic: EndpointConfig::new("aesthetic-predictor", 30.0),
            decoder_command: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid backend config: {0}")]
pub struct ConfigError(pub String);

impl BackendConfig {
    pub fn endpoint(&self, kind: BackendKind) -> &EndpointConfig {
        match kind {
            BackendKind::Chat => &self.chat,
            BackendKind::Embed => &self.embed,
            BackendKind::I2v => &self.i2v.endpoint,
            BackendKind::Track => &self.track,
            BackendKind::Aesthetic => &self.aesthetic,
        }
    }

    fn endpoint_mut(&mut self, kind: BackendKind) -> &mut EndpointConfig {
        match kind {
            BackendKind::Chat => &mut self.chat,
            BackendKind::Embed => &mut self.embed,
            BackendKind::I2v => &mut self.i2v.endpoint,
            BackendKind::Track => &mut self.track,
            BackendKind::Aesthetic => &mut self.aesthetic,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for kind in BackendKind::ALL {
            let ep = self.endpoint(kind);
            if !(ep.timeout_secs.is_finite() && ep.timeout_secs > 0.0) {
                return Err(ConfigError(format!("{kind:?} timeout must be > 0")));
            }
        }
        if !(self.i2v.poll_interval_secs.is_finite() && self.i2v.poll_interval_secs > 0.0) {
            return Err(ConfigError("i2v poll interval must be > 0".into()));
        }
        if !(self.i2v.poll_timeout_secs.is_finite() && self.i2v.poll_timeout_secs > 0.0) {
            return Err(ConfigError("i2v poll timeout must be > 0".into()));
        }
        Ok(())
    }

    /// Replaces endpoint URLs from `BACKEND_*_URL` variables found by `lookup`.
    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for kind in BackendKind::ALL {
            if let Some(url) = lookup(kind.env_var()) {
                self.endpoint_mut(kind).url = url;
            }
        }
    }

    /// Number of poll requests allowed before a job is declared timed out.
    pub fn max_polls(&self) -> u64 {
        (self.i2v.poll_timeout_secs / self.i2v.poll_interval_secs).ceil().max(1.0) as u64
    }
}
