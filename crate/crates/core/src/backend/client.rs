use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{BackendConfig, BackendKind};
use super::frames::{self, FramesError};
use super::transport::{Transport, WireRequest, WireResponse};
use super::wire::*;
use super::{EmbeddingOf, FrameOrigin, Track, TrackPoint, TrackSetOf, Trajectory};
use crate::imaging::{self, sha256_hex, Frame};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{endpoint} unreachable after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: Endpoint,
        attempts: u32,
        message: String,
    },
    #[error("{endpoint} answered {status} ({code}): {message}")]
    Protocol {
        endpoint: Endpoint,
        status: u16,
        code: String,
        message: String,
    },
    #[error("chat backend returned an empty completion")]
    EmptyCompletion,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("i2v job rejected: {0}")]
    JobRejected(String),
    #[error("i2v job {job_id} failed")]
    JobFailed { job_id: String },
    #[error("i2v job {job_id} still pending after {polls} polls")]
    PollTimeout { job_id: String, polls: u64 },
    #[error("download for job {job_id} has sha256 {actual}, header says {expected}")]
    ChecksumMismatch {
        job_id: String,
        expected: String,
        actual: String,
    },
    #[error("could not decode frames for job {job_id}: {message}")]
    Decode { job_id: String, message: String },
}

impl BackendError {
    fn protocol(endpoint: Endpoint, status: u16, code: &str, message: impl Into<String>) -> Self {
        BackendError::Protocol {
            endpoint,
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoParams {
    pub frame_count: u32,
    pub fps: u32,
    pub seed: u64,
}

/// Typed access to every backend over one [`Transport`].
///
/// Each call makes `1 + retry_budget` attempts at most; transport failures,
/// 5xx and 429 answers are retried, every other 4xx fails immediately.
#[derive(Clone)]
pub struct ModelClients {
    transport: Arc<dyn Transport>,
    config: BackendConfig,
    embed_dim: Arc<Mutex<Option<usize>>>,
}

impl ModelClients {
    pub fn new(transport: Arc<dyn Transport>, config: BackendConfig) -> Self {
        ModelClients {
            transport,
            config,
            embed_dim: Arc::new(Mutex::new(None)),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn call(&self, endpoint: Endpoint, body: &impl Serialize) -> Result<WireResponse, BackendError> {
        let ep = self.config.endpoint(BackendKind::of(endpoint));
        let request = WireRequest {
            endpoint,
            body: serde_json::to_vec(body).expect("wire payloads serialize"),
        };
        let attempts = 1 + ep.retry_budget;
        let mut last_failure = String::new();
        for attempt in 1..=attempts {
            match self.transport.send(&request) {
                Ok(resp) if resp.is_success() => return Ok(resp),
                Ok(resp) if resp.status >= 500 || resp.status == 429 => {
                    last_failure = format!("status {}: {}", resp.status, error_message(&resp));
                }
                Ok(resp) => {
                    let (code, message) = error_parts(&resp);
                    return Err(BackendError::Protocol {
                        endpoint,
                        status: resp.status,
                        code,
                        message,
                    });
                }
                Err(e) => last_failure = e.message,
            }
            debug!("{endpoint} attempt {attempt}/{attempts} failed: {last_failure}");
            if attempt < attempts && ep.backoff_ms > 0 {
                thread::sleep(Duration::from_millis(ep.backoff_ms << (attempt - 1).min(6)));
            }
        }
        Err(BackendError::Transport {
            endpoint,
            attempts,
            message: last_failure,
        })
    }

    fn call_json<R: DeserializeOwned>(
        &self,
        endpoint: Endpoint,
        body: &impl Serialize,
    ) -> Result<R, BackendError> {
        let resp = self.call(endpoint, body)?;
        serde_json::from_slice(&resp.body).map_err(|e| {
            BackendError::protocol(endpoint, resp.status, "malformed_response", e.to_string())
        })
    }

    /// Returns the completion text verbatim. Parsing it is the caller's job,
    /// even when a `response_schema` hint was sent.
    pub fn chat(
        &self,
        messages: &[ChatMessage],
        response_schema: Option<&serde_json::Value>,
    ) -> Result<String, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::Precondition("chat needs at least one message".into()));
        }
        let request = ChatRequest {
            model: self.config.chat.model.clone(),
            messages: messages.to_vec(),
            response_schema: response_schema.cloned(),
        };
        let resp: ChatResponse = self.call_json(Endpoint::Chat, &request)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or(BackendError::EmptyCompletion)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingOf<f64>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::Precondition("embed needs at least one text".into()));
        }
        let request = EmbedRequest {
            model: self.config.embed.model.clone(),
            input: texts.to_vec(),
        };
        let resp: EmbedResponse = self.call_json(Endpoint::Embed, &request)?;
        if resp.data.len() != texts.len() {
            return Err(BackendError::protocol(
                Endpoint::Embed,
                200,
                "count_mismatch",
                format!("{} embeddings for {} inputs", resp.data.len(), texts.len()),
            ));
        }
        let mut known = self.embed_dim.lock().expect("embed dim lock");
        let expected = *known.get_or_insert(resp.data[0].embedding.len());
        let mut out = Vec::with_capacity(resp.data.len());
        for d in resp.data {
            if d.embedding.len() != expected || expected == 0 {
                return Err(BackendError::DimensionMismatch {
                    expected,
                    got: d.embedding.len(),
                });
            }
            if d.embedding.iter().any(|v| !v.is_finite()) {
                return Err(BackendError::protocol(
                    Endpoint::Embed,
                    200,
                    "non_finite",
                    "embedding holds a non-finite value",
                ));
            }
            out.push(EmbeddingOf { values: d.embedding });
        }
        Ok(out)
    }

    pub fn submit_video(
        &self,
        first_frame: &Frame,
        prompt: &str,
        params: VideoParams,
    ) -> Result<String, BackendError> {
        if first_frame.width() == 0 || first_frame.height() == 0 {
            return Err(BackendError::Precondition("first frame is empty".into()));
        }
        if params.frame_count < 2 {
            return Err(BackendError::Precondition(format!(
                "frame_count must be >= 2, got {}",
                params.frame_count
            )));
        }
        let request = SubmitRequest {
            image: imaging::to_base64_png(first_frame),
            prompt: prompt.to_string(),
            frame_count: params.frame_count,
            fps: params.fps,
            seed: params.seed,
        };
        match self.call_json::<SubmitResponse>(Endpoint::I2vSubmit, &request) {
            Ok(r) => Ok(r.job_id),
            Err(BackendError::Protocol { status, message, .. }) if status < 500 && status != 200 => {
                Err(BackendError::JobRejected(message))
            }
            Err(e) => Err(e),
        }
    }

    /// Polls until the job is done, fails, or the poll budget runs out.
    pub fn wait_for_video(&self, job_id: &str) -> Result<(), BackendError> {
        let max_polls = self.config.max_polls();
        let interval = Duration::from_secs_f64(self.config.i2v.poll_interval_secs);
        let job = JobRef {
            job_id: job_id.to_string(),
        };
        for poll in 0..max_polls {
            if poll > 0 {
                thread::sleep(interval);
            }
            let resp: PollResponse = self.call_json(Endpoint::I2vPoll, &job)?;
            match resp.status {
                JobStatus::Done => return Ok(()),
                JobStatus::Failed => {
                    return Err(BackendError::JobFailed {
                        job_id: job_id.to_string(),
                    })
                }
                JobStatus::Queued | JobStatus::Running => {}
            }
        }
        Err(BackendError::PollTimeout {
            job_id: job_id.to_string(),
            polls: max_polls,
        })
    }

    pub fn fetch_video(&self, job_id: &str) -> Result<Vec<Frame>, BackendError> {
        let job = JobRef {
            job_id: job_id.to_string(),
        };
        let resp = self.call(Endpoint::I2vFetch, &job)?;
        if let Some(expected) = &resp.content_sha256 {
            let actual = sha256_hex(&resp.body);
            if !expected.eq_ignore_ascii_case(&actual) {
                return Err(BackendError::ChecksumMismatch {
                    job_id: job_id.to_string(),
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        let decoded = if resp.content_type.starts_with(CONTENT_MP4) {
            frames::decode_mp4(&resp.body, self.config.decoder_command.as_deref())
        } else if resp.content_type.starts_with(CONTENT_ZIP) {
            frames::unpack_zip(&resp.body)
        } else {
            return Err(BackendError::protocol(
                Endpoint::I2vFetch,
                resp.status,
                "unsupported_media",
                format!("unexpected content type {:?}", resp.content_type),
            ));
        };
        decoded.map_err(|e: FramesError| BackendError::Decode {
            job_id: job_id.to_string(),
            message: e.to_string(),
        })
    }

    /// Fetches a finished job and checks its shape against `params`.
    pub fn collect_video(
        &self,
        job_id: &str,
        params: VideoParams,
        origin: FrameOrigin,
    ) -> Result<Trajectory, BackendError> {
        self.wait_for_video(job_id)?;
        let frames = self.fetch_video(job_id)?;
        if frames.len() != params.frame_count as usize {
            return Err(BackendError::protocol(
                Endpoint::I2vFetch,
                200,
                "frame_count_mismatch",
                format!("job {job_id} returned {} frames, asked for {}", frames.len(), params.frame_count),
            ));
        }
        let dims = frames[0].dimensions();
        if frames.iter().any(|f| f.dimensions() != dims) {
            return Err(BackendError::protocol(
                Endpoint::I2vFetch,
                200,
                "frame_size_mismatch",
                format!("job {job_id} returned frames of differing sizes"),
            ));
        }
        Ok(Trajectory {
            frames,
            fps: params.fps,
            source: job_id.to_string(),
            first_frame_origin: origin,
        })
    }

    /// Submit, poll and download in one go.
    pub fn generate_video(
        &self,
        first_frame: &Frame,
        prompt: &str,
        params: VideoParams,
        origin: FrameOrigin,
    ) -> Result<Trajectory, BackendError> {
        let job_id = self.submit_video(first_frame, prompt, params)?;
        self.collect_video(&job_id, params, origin)
    }

    /// An empty result (no correspondence with the reference) is data, not an
    /// error; it comes back flagged.
    pub fn track_keypoints(
        &self,
        reference: &Frame,
        traj: &Trajectory,
    ) -> Result<TrackSetOf<f64>, BackendError> {
        if traj.len() < 2 {
            return Err(BackendError::Precondition(format!(
                "tracking needs >= 2 frames, got {}",
                traj.len()
            )));
        }
        let request = TrackRequest {
            reference: imaging::to_base64_png(reference),
            frames: traj.frames.iter().map(imaging::to_base64_png).collect(),
        };
        let resp: TrackResponse = self.call_json(Endpoint::Track, &request)?;
        let frame_count = traj.len();
        if resp.tracks.is_empty() {
            warn!("tracker found no correspondence for {}", traj.source);
            return Ok(TrackSetOf::empty(frame_count));
        }
        let set = TrackSetOf {
            frame_count,
            no_correspondence: false,
            tracks: resp
                .tracks
                .into_iter()
                .map(|t| Track {
                    id: t.id,
                    points: t
                        .points
                        .into_iter()
                        .map(|p| TrackPoint {
                            x: p.x,
                            y: p.y,
                            visible: p.visible,
                        })
                        .collect(),
                })
                .collect(),
        };
        set.check()
            .map_err(|m| BackendError::protocol(Endpoint::Track, 200, "malformed_tracks", m))?;
        Ok(set)
    }

    pub fn aesthetic_score(&self, frame: &Frame) -> Result<f64, BackendError> {
        let request = AestheticRequest {
            frame: imaging::to_base64_png(frame),
        };
        let resp: AestheticResponse = self.call_json(Endpoint::Aesthetic, &request)?;
        if !(resp.score.is_finite() && (0.0..=10.0).contains(&resp.score)) {
            return Err(BackendError::protocol(
                Endpoint::Aesthetic,
                200,
                "out_of_range",
                format!("aesthetic score {} outside [0, 10]", resp.score),
            ));
        }
        Ok(resp.score)
    }
}

fn error_parts(resp: &WireResponse) -> (String, String) {
    match serde_json::from_slice::<ErrorEnvelope>(&resp.body) {
        Ok(env) => (env.error.code, env.error.message),
        Err(_) => (
            "http_error".to_string(),
            String::from_utf8_lossy(&resp.body).chars().take(200).collect(),
        ),
    }
}

fn error_message(resp: &WireResponse) -> String {
    error_parts(resp).1
}
