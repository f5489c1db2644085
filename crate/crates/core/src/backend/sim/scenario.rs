use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::wire::{Endpoint, WireTrack};

/// Scripted behaviour of the simulation backend.
///
/// Every endpoint consumes its scripted responses in order; what happens once
/// a script runs dry is set per script by `when_exhausted`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    pub chat: ChatScript,
    pub embed: EmbedScript,
    pub i2v: I2vScript,
    pub track: TrackScript,
    pub aesthetic: AestheticScript,
    pub faults: Vec<Fault>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exhausted {
    /// Answer 400 `scenario_exhausted`.
    Error,
    /// Keep answering with the last scripted response.
    RepeatLast,
    /// Synthesize an answer from the seed and the request.
    Procedural,
    /// Captions only: describe something unrelated to the script.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedError {
    pub status: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChatReply {
    Raw(String),
    Text { text: String },
    Json { json: serde_json::Value },
    Error { error: ScriptedError },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplyQueue {
    pub replies: Vec<ChatReply>,
    pub when_exhausted: Option<Exhausted>,
}

/// One reply queue per prompt task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatScript {
    /// Default when exhausted: error.
    pub director: ReplyQueue,
    /// Default when exhausted: procedural (lightly revised original entry).
    pub refine: ReplyQueue,
    /// Default when exhausted: procedural (faithful to the current sheet).
    pub caption: ReplyQueue,
    /// Default when exhausted: procedural (seeded triad).
    pub critic: ReplyQueue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedScript {
    pub dim: usize,
    /// Exact text → vector, returned as given.
    pub overrides: BTreeMap<String, Vec<f64>>,
}

impl Default for EmbedScript {
    fn default() -> Self {
        EmbedScript {
            dim: 64,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobScript {
    /// Polls answered `running` before the job reports its final status.
    pub polls_until_done: u32,
    pub fail: bool,
    /// Refuse the submission with this message.
    pub reject: Option<String>,
    pub corrupt_first_frame: bool,
    pub bad_checksum: bool,
    /// Peak per-frame motion in pixels.
    pub motion_amplitude: f64,
}

impl Default for JobScript {
    fn default() -> Self {
        JobScript {
            polls_until_done: 1,
            fail: false,
            reject: None,
            corrupt_first_frame: false,
            bad_checksum: false,
            motion_amplitude: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct I2vScript {
    /// Consumed one per submission.
    pub jobs: Vec<JobScript>,
    pub default_job: JobScript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackPreset {
    Static,
    NoMatch,
    Procedural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackReply {
    Preset(TrackPreset),
    Tracks { tracks: Vec<WireTrack> },
    Error { error: ScriptedError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackScript {
    pub responses: Vec<TrackReply>,
    pub when_exhausted: Option<Exhausted>,
    pub procedural_tracks: usize,
}

impl Default for TrackScript {
    fn default() -> Self {
        TrackScript {
            responses: Vec::new(),
            when_exhausted: None,
            procedural_tracks: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AestheticReply {
    Score(f64),
    Error { error: ScriptedError },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AestheticScript {
    pub responses: Vec<AestheticReply>,
    pub when_exhausted: Option<Exhausted>,
}

/// Fails calls `from_call .. from_call + count` (0-based, counted per
/// endpoint) with `status`. No `count` means every call from `from_call` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub endpoint: Endpoint,
    #[serde(default)]
    pub from_call: u64,
    #[serde(default)]
    pub count: Option<u64>,
    #[serde(default = "default_fault_status")]
    pub status: u16,
}

fn default_fault_status() -> u16 {
    503
}

impl Fault {
    pub fn covers(&self, endpoint: Endpoint, call: u64) -> bool {
        self.endpoint == endpoint
            && call >= self.from_call
            && self.count.is_none_or(|n| call < self.from_call + n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_json_forms() {
        let s = Scenario::from_json(
            r#"{
                "seed": 9,
                "chat": {
                    "director": {"replies": ["not json", {"json": {"a": 1}}, {"error": {"status": 503}}]},
                    "critic": {"replies": [{"text": "3,3,3"}], "when_exhausted": "repeat_last"}
                },
                "track": {"responses": ["static", "no_match", {"tracks": []}]},
                "aesthetic": {"responses": [5.0, 7.0, {"error": {"status": 500}}]},
                "faults": [{"endpoint": "chat", "count": 2}]
            }"#,
        )
        .unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.chat.director.replies[0], ChatReply::Raw("not json".into()));
        assert!(matches!(s.chat.director.replies[2], ChatReply::Error { .. }));
        assert_eq!(s.chat.critic.when_exhausted, Some(Exhausted::RepeatLast));
        assert_eq!(s.track.responses[0], TrackReply::Preset(TrackPreset::Static));
        assert_eq!(s.aesthetic.responses[1], AestheticReply::Score(7.0));
        assert_eq!(s.faults[0].status, 503);
        assert!(s.faults[0].covers(Endpoint::Chat, 1));
        assert!(!s.faults[0].covers(Endpoint::Chat, 2));
        assert_eq!(s.embed.dim, 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Scenario::from_json(r#"{"chats": {}}"#).is_err());
    }
}
