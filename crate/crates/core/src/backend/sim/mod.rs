//! Deterministic in-process backend speaking the wire protocol.
//!
//! Responses are a pure function of the scenario, its seed and the sequence of
//! requests received so far. Scenario consumption sits behind one lock, so a
//! shared instance stays deterministic for a given request order.

pub mod procedural;
pub mod scenario;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::frames::pack_zip;
use super::transport::{Transport, TransportError, WireRequest, WireResponse};
use super::wire::*;
use crate::dopesheet::{self, DimensionKey, DopeSheet, Patch};
use crate::imaging::{self, content_hash, sha256_hex};
use crate::prompts::{self, parse_task_header, Task};
use procedural::rng_for;
pub use scenario::*;

/// One handled request, as recorded in the sim's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub endpoint: Endpoint,
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    /// Content hash of the submitted first frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_frame_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl LogEntry {
    fn new(seq: u64, endpoint: Endpoint) -> Self {
        LogEntry {
            seq,
            endpoint,
            status: 200,
            task: None,
            shot: None,
            dimension: None,
            job_id: None,
            first_frame_hash: None,
            prompt: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimJob {
    script: JobScript,
    image: String,
    prompt: String,
    frame_count: u32,
    seed: u64,
    polls: u32,
}

impl SimJob {
    fn status(&self) -> JobStatus {
        if self.polls <= self.script.polls_until_done {
            JobStatus::Running
        } else if self.script.fail {
            JobStatus::Failed
        } else {
            JobStatus::Done
        }
    }
}

/// Everything the sim remembers between requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    seq: u64,
    calls: BTreeMap<Endpoint, u64>,
    cursors: BTreeMap<String, usize>,
    submissions: u64,
    jobs: BTreeMap<String, SimJob>,
    /// Latest dope sheet seen in director replies, with refinements applied.
    sheet: Option<DopeSheet>,
    log: Vec<LogEntry>,
}

pub struct SimBackend {
    scenario: Scenario,
    state: Mutex<SimState>,
    state_file: Option<PathBuf>,
}

struct Reply {
    status: u16,
    body: Value,
}

impl Reply {
    fn ok(body: Value) -> Self {
        Reply { status: 200, body }
    }

    fn err(status: u16, code: &str, message: impl Into<String>) -> Self {
        Reply {
            status,
            body: serde_json::to_value(ErrorEnvelope::new(code, message)).expect("envelope"),
        }
    }
}

impl SimBackend {
    pub fn new(scenario: Scenario) -> Self {
        SimBackend {
            scenario,
            state: Mutex::new(SimState::default()),
            state_file: None,
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(SimBackend::new(Scenario::load(path)?))
    }

    /// Persists state to `path` after every request, starting from its
    /// current contents if the file exists.
    pub fn with_state_file(mut self, path: &Path) -> std::io::Result<Self> {
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            let state: SimState = serde_json::from_str(&text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            self.state = Mutex::new(state);
        }
        self.state_file = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn log(&self) -> Vec<LogEntry> {
        self.lock().log.clone()
    }

    /// Requests received so far on `endpoint`, faults included.
    pub fn count(&self, endpoint: Endpoint) -> u64 {
        self.lock().calls.get(&endpoint).copied().unwrap_or(0)
    }

    pub fn total_requests(&self) -> u64 {
        self.lock().seq
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, SimState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn handle(&self, request: &WireRequest) -> WireResponse {
        let mut state = self.lock();
        let seq = state.seq;
        state.seq += 1;
        let call = {
            let n = state.calls.entry(request.endpoint).or_insert(0);
            *n += 1;
            *n - 1
        };
        let mut entry = LogEntry::new(seq, request.endpoint);

        let fault = self
            .scenario
            .faults
            .iter()
            .find(|f| f.covers(request.endpoint, call));
        let response = match fault {
            Some(f) => to_wire(Reply::err(f.status, "injected_fault", format!("scripted fault on call {call}"))),
            None => match serde_json::from_slice::<Value>(&request.body) {
                Err(e) => to_wire(Reply::err(400, "bad_request", format!("body is not JSON: {e}"))),
                Ok(body) => self.dispatch(&mut state, request.endpoint, body, &mut entry),
            },
        };
        entry.status = response.status;
        state.log.push(entry);
        if let Some(path) = &self.state_file {
            let text = serde_json::to_string(&*state).expect("sim state serializes");
            if let Err(e) = std::fs::write(path, text) {
                log::warn!("could not persist sim state to {}: {e}", path.display());
            }
        }
        response
    }

    fn dispatch(&self, state: &mut SimState, endpoint: Endpoint, body: Value, entry: &mut LogEntry) -> WireResponse {
        match endpoint {
            Endpoint::Chat => to_wire(parse(body).map_or_else(|r| r, |req| self.chat(state, req, entry))),
            Endpoint::Embed => to_wire(parse(body).map_or_else(|r| r, |req| self.embed(req))),
            Endpoint::I2vSubmit => to_wire(parse(body).map_or_else(|r| r, |req| self.submit(state, req, entry))),
            Endpoint::I2vPoll => to_wire(parse(body).map_or_else(|r| r, |req: JobRef| {
                entry.job_id = Some(req.job_id.clone());
                match state.jobs.get_mut(&req.job_id) {
                    None => unknown_job(&req.job_id),
                    Some(job) => {
                        job.polls += 1;
                        Reply::ok(json!(PollResponse { status: job.status() }))
                    }
                }
            })),
            Endpoint::I2vFetch => match parse::<JobRef>(body) {
                Err(r) => to_wire(r),
                Ok(req) => {
                    entry.job_id = Some(req.job_id.clone());
                    self.fetch(state, &req.job_id)
                }
            },
            Endpoint::Track => to_wire(parse(body).map_or_else(|r| r, |req| self.track(state, req))),
            Endpoint::Aesthetic => to_wire(parse(body).map_or_else(|r| r, |req| self.aesthetic(state, req))),
        }
    }

    fn next<'a, T>(&self, state: &mut SimState, queue: &str, items: &'a [T]) -> Option<&'a T> {
        let cursor = state.cursors.entry(queue.to_string()).or_insert(0);
        let item = items.get(*cursor);
        if item.is_some() {
            *cursor += 1;
        }
        item
    }

    fn chat(&self, state: &mut SimState, req: ChatRequest, entry: &mut LogEntry) -> Reply {
        let Some(first) = req.messages.first() else {
            return Reply::err(400, "bad_request", "messages must not be empty");
        };
        let Some(header) = parse_task_header(&first.joined_text()) else {
            return Reply::err(400, "unknown_task", "first message carries no task header");
        };
        entry.task = Some(header.task.tag().to_string());
        entry.shot = header.params.get("shot").and_then(|s| s.parse().ok());
        entry.dimension = header.params.get("dimension").cloned();

        let (queue, default_exhausted) = match header.task {
            Task::DirectorBuild => (&self.scenario.chat.director, Exhausted::Error),
            Task::DirectorRefine => (&self.scenario.chat.refine, Exhausted::Procedural),
            Task::ReviewerCaption => (&self.scenario.chat.caption, Exhausted::Procedural),
            Task::ReviewerCritic => (&self.scenario.chat.critic, Exhausted::Procedural),
        };
        let scripted = match self.next(state, header.task.tag(), &queue.replies) {
            Some(r) => Some(r.clone()),
            None => match queue.when_exhausted.unwrap_or(default_exhausted) {
                Exhausted::Error => {
                    return Reply::err(400, "scenario_exhausted", format!("no scripted {} reply left", header.task.tag()))
                }
                Exhausted::RepeatLast => match queue.replies.last() {
                    Some(r) => Some(r.clone()),
                    None => return Reply::err(400, "scenario_exhausted", "nothing to repeat"),
                },
                Exhausted::Procedural => None,
                Exhausted::Adversarial => {
                    let shot = entry.shot.unwrap_or(0);
                    let mut rng = rng_for(self.scenario.seed, "adversarial", &[&state.seq.to_le_bytes()]);
                    let text = serde_json::to_string_pretty(&procedural::adversarial_shot(shot, &mut rng))
                        .expect("shot serializes");
                    Some(ChatReply::Raw(text))
                }
            },
        };
        let text = match scripted {
            Some(ChatReply::Raw(s)) | Some(ChatReply::Text { text: s }) => s,
            Some(ChatReply::Json { json }) => serde_json::to_string_pretty(&json).expect("json"),
            Some(ChatReply::Error { error }) => {
                return Reply::err(error.status, "scripted_error", "scripted chat failure")
            }
            None => self.procedural_chat(state, header.task, entry, &req.messages),
        };
        self.observe(state, header.task, &text);
        Reply::ok(json!(ChatResponse {
            choices: vec![ChatChoice {
                message: ChatReplyMessage { content: Some(text) },
            }],
        }))
    }

    /// Tracks the story the client is working on so faithful captions follow
    /// the current sheet.
    fn observe(&self, state: &mut SimState, task: Task, reply: &str) {
        match task {
            Task::DirectorBuild => {
                if let Ok(ds) = dopesheet::parse(prompts::extract_json(reply)) {
                    state.sheet = Some(ds);
                }
            }
            Task::DirectorRefine => {
                let patch = serde_json::from_str::<Patch>(prompts::extract_json(reply));
                if let (Ok(patch), Some(ds)) = (patch, state.sheet.as_ref()) {
                    if let Ok(next) = dopesheet::apply_patch(ds, &patch) {
                        state.sheet = Some(next);
                    }
                }
            }
            Task::ReviewerCaption | Task::ReviewerCritic => {}
        }
    }

    fn procedural_chat(&self, state: &mut SimState, task: Task, entry: &LogEntry, messages: &[ChatMessage]) -> String {
        let seed = self.scenario.seed;
        let shot = entry.shot.unwrap_or(0);
        match task {
            Task::DirectorBuild => {
                let user = messages.get(1).map(ChatMessage::joined_text).unwrap_or_default();
                serde_json::to_string_pretty(&procedural::story_sheet(&user)).expect("sheet serializes")
            }
            Task::DirectorRefine => {
                let user = messages.get(1).map(ChatMessage::joined_text).unwrap_or_default();
                let dimension = entry
                    .dimension
                    .as_deref()
                    .and_then(DimensionKey::parse)
                    .unwrap_or(DimensionKey::Shots);
                let original = fenced_json(&user).unwrap_or(Value::Null);
                let round = state.cursors.get("refine.procedural").copied().unwrap_or(0);
                state.cursors.insert("refine.procedural".into(), round + 1);
                serde_json::to_string_pretty(&json!({
                    "shot_index": shot,
                    "dimension": dimension.name(),
                    "replacement": procedural::revise_dimension(&original, dimension, round as u64 + 1),
                    "reason": "ground the entry in visible detail",
                }))
                .expect("patch serializes")
            }
            Task::ReviewerCaption => {
                let faithful = state.sheet.as_ref().and_then(|ds| ds.shots.get(shot)).cloned();
                let entry = match faithful {
                    Some(mut s) => {
                        s.linkage = dopesheet::Linkage::F;
                        s
                    }
                    None => {
                        let mut rng = rng_for(seed, "caption", &[&state.seq.to_le_bytes()]);
                        procedural::adversarial_shot(shot, &mut rng)
                    }
                };
                serde_json::to_string_pretty(&entry).expect("shot serializes")
            }
            Task::ReviewerCritic => {
                let image = messages.iter().flat_map(|m| m.images()).next().unwrap_or("");
                let [a, e, p] = procedural::procedural_triad(&mut rng_for(seed, "critic", &[image.as_bytes()]));
                format!("{{\"alignment\": {a}, \"expressiveness\": {e}, \"persuasiveness\": {p}}}")
            }
        }
    }

    fn embed(&self, req: EmbedRequest) -> Reply {
        if req.input.is_empty() {
            return Reply::err(400, "bad_request", "input must not be empty");
        }
        let script = &self.scenario.embed;
        let data = req
            .input
            .iter()
            .map(|text| EmbeddingData {
                embedding: script
                    .overrides
                    .get(text)
                    .cloned()
                    .unwrap_or_else(|| procedural::hash_bag_embedding(text, self.scenario.seed, script.dim)),
            })
            .collect();
        Reply::ok(json!(EmbedResponse { data }))
    }

    fn submit(&self, state: &mut SimState, req: SubmitRequest, entry: &mut LogEntry) -> Reply {
        let first = match imaging::from_base64_png(&req.image) {
            Ok(f) => f,
            Err(e) => return Reply::err(400, "bad_image", e.to_string()),
        };
        entry.first_frame_hash = Some(content_hash(&first));
        entry.prompt = Some(req.prompt.clone());
        entry.seed = Some(req.seed);
        if req.frame_count < 2 {
            return Reply::err(400, "bad_request", "frame_count must be >= 2");
        }
        let n = state.submissions;
        let script = self
            .scenario
            .i2v
            .jobs
            .get(n as usize)
            .cloned()
            .unwrap_or_else(|| self.scenario.i2v.default_job.clone());
        if let Some(reason) = &script.reject {
            state.submissions += 1;
            return Reply::err(422, "job_rejected", reason.clone());
        }
        let job_id = format!("sim-{:016x}-{n:04}", self.scenario.seed);
        state.submissions += 1;
        entry.job_id = Some(job_id.clone());
        state.jobs.insert(
            job_id.clone(),
            SimJob {
                script,
                image: req.image,
                prompt: req.prompt,
                frame_count: req.frame_count,
                seed: req.seed,
                polls: 0,
            },
        );
        Reply::ok(json!(SubmitResponse { job_id }))
    }

    fn fetch(&self, state: &SimState, job_id: &str) -> WireResponse {
        let Some(job) = state.jobs.get(job_id) else {
            return to_wire(unknown_job(job_id));
        };
        match job.status() {
            JobStatus::Done => {}
            JobStatus::Failed => return to_wire(Reply::err(409, "job_failed", format!("job {job_id} failed"))),
            _ => return to_wire(Reply::err(409, "job_not_ready", format!("job {job_id} is still running"))),
        }
        let first = imaging::from_base64_png(&job.image).expect("validated at submit");
        let mut rng = rng_for(
            self.scenario.seed ^ job.seed,
            "i2v",
            &[job_id.as_bytes(), job.prompt.as_bytes()],
        );
        let mut frames = procedural::render_frames(&first, job.frame_count as usize, job.script.motion_amplitude, &mut rng);
        if job.script.corrupt_first_frame {
            let px = frames[0].get_pixel_mut(0, 0);
            px.0 = px.0.map(|c| c ^ 0xff);
        }
        let body = pack_zip(&frames);
        let digest = if job.script.bad_checksum {
            "0".repeat(64)
        } else {
            sha256_hex(&body)
        };
        WireResponse {
            status: 200,
            content_type: CONTENT_ZIP.to_string(),
            body,
            content_sha256: Some(digest),
        }
    }

    fn track(&self, state: &mut SimState, req: TrackRequest) -> Reply {
        if req.frames.len() < 2 {
            return Reply::err(400, "bad_request", "tracking needs at least two frames");
        }
        let first = match imaging::from_base64_png(&req.frames[0]) {
            Ok(f) => f,
            Err(e) => return Reply::err(400, "bad_image", e.to_string()),
        };
        let script = &self.scenario.track;
        let reply = match self.next(state, "track", &script.responses) {
            Some(r) => r.clone(),
            None => match script.when_exhausted.unwrap_or(Exhausted::Procedural) {
                Exhausted::Error => return Reply::err(400, "scenario_exhausted", "no scripted track reply left"),
                Exhausted::RepeatLast => match script.responses.last() {
                    Some(r) => r.clone(),
                    None => TrackReply::Preset(TrackPreset::Procedural),
                },
                Exhausted::Procedural | Exhausted::Adversarial => TrackReply::Preset(TrackPreset::Procedural),
            },
        };
        let procedural = |still| {
            let (w, h) = first.dimensions();
            let mut rng = rng_for(
                self.scenario.seed,
                "track",
                &[content_hash(&first).as_bytes(), &(req.frames.len() as u64).to_le_bytes()],
            );
            procedural::procedural_tracks(w, h, req.frames.len(), script.procedural_tracks, still, &mut rng)
        };
        let tracks = match reply {
            TrackReply::Preset(TrackPreset::NoMatch) => Vec::new(),
            TrackReply::Preset(TrackPreset::Static) => procedural(true),
            TrackReply::Preset(TrackPreset::Procedural) => procedural(false),
            TrackReply::Tracks { tracks } => tracks,
            TrackReply::Error { error } => return Reply::err(error.status, "scripted_error", "scripted track failure"),
        };
        Reply::ok(json!(TrackResponse { tracks }))
    }

    fn aesthetic(&self, state: &mut SimState, req: AestheticRequest) -> Reply {
        if let Err(e) = imaging::from_base64_png(&req.frame) {
            return Reply::err(400, "bad_image", e.to_string());
        }
        let script = &self.scenario.aesthetic;
        let scripted = match self.next(state, "aesthetic", &script.responses) {
            Some(r) => Some(*r),
            None => match script.when_exhausted.unwrap_or(Exhausted::Procedural) {
                Exhausted::Error => return Reply::err(400, "scenario_exhausted", "no scripted aesthetic reply left"),
                Exhausted::RepeatLast => script.responses.last().copied(),
                Exhausted::Procedural | Exhausted::Adversarial => None,
            },
        };
        match scripted {
            Some(AestheticReply::Score(score)) => Reply::ok(json!(AestheticResponse { score })),
            Some(AestheticReply::Error { error }) => Reply::err(error.status, "scripted_error", "scripted aesthetic failure"),
            None => {
                let mut rng = rng_for(self.scenario.seed, "aesthetic", &[req.frame.as_bytes()]);
                Reply::ok(json!(AestheticResponse {
                    score: procedural::procedural_aesthetic(&mut rng)
                }))
            }
        }
    }
}

impl Transport for SimBackend {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, TransportError> {
        Ok(self.handle(request))
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: Value) -> Result<T, Reply> {
    serde_json::from_value(body).map_err(|e| Reply::err(400, "bad_request", e.to_string()))
}

fn unknown_job(job_id: &str) -> Reply {
    Reply::err(404, "unknown_job", format!("no job {job_id}"))
}

fn to_wire(reply: Reply) -> WireResponse {
    WireResponse::json(reply.status, &reply.body)
}

/// Body of the first ```json fence in `text`, parsed.
fn fenced_json(text: &str) -> Option<Value> {
    let start = text.find("```json")?;
    let body = &text[start + "```json".len()..];
    let end = body.find("```")?;
    serde_json::from_str(body[..end].trim()).ok()
}
