//! JSON-over-HTTP wire protocol shared by every backend.
//!
//! All calls are `POST` with a JSON body. Successful responses are JSON except
//! `i2v/fetch`, which returns a ZIP of PNG frames (`application/zip`) or MP4
//! bytes (`video/mp4`). Failures carry an [`ErrorEnvelope`] with a 4xx status
//! for caller mistakes (never retried) or a 5xx status (retried).

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Chat,
    Embed,
    I2vSubmit,
    I2vPoll,
    I2vFetch,
    Track,
    Aesthetic,
}

impl Endpoint {
    pub const ALL: [Endpoint; 7] = [
        Endpoint::Chat,
        Endpoint::Embed,
        Endpoint::I2vSubmit,
        Endpoint::I2vPoll,
        Endpoint::I2vFetch,
        Endpoint::Track,
        Endpoint::Aesthetic,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Chat => "/v1/chat/completions",
            Endpoint::Embed => "/v1/embeddings",
            Endpoint::I2vSubmit => "/v1/i2v/submit",
            Endpoint::I2vPoll => "/v1/i2v/poll",
            Endpoint::I2vFetch => "/v1/i2v/fetch",
            Endpoint::Track => "/v1/track",
            Endpoint::Aesthetic => "/v1/aesthetic",
        }
    }

    pub fn from_path(path: &str) -> Option<Endpoint> {
        Endpoint::ALL.into_iter().find(|e| e.path() == path)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}

pub const CONTENT_JSON: &str = "application/json";
pub const CONTENT_ZIP: &str = "application/zip";
pub const CONTENT_MP4: &str = "video/mp4";
/// Optional header on `i2v/fetch` carrying the SHA-256 of the body.
pub const HEADER_CONTENT_SHA256: &str = "x-content-sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ErrorEnvelope {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        ErrorEnvelope {
            error: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

// chat

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    Text { text: String },
    /// Base64-encoded PNG.
    Image { image: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    /// Concatenated text parts.
    pub fn joined_text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.content.iter().filter_map(|p| match p {
            ContentPart::Image { image } => Some(image.as_str()),
            ContentPart::Text { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatReplyMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReplyMessage {
    #[serde(default)]
    pub content: Option<String>,
}

// embed

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub input: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub data: Vec<EmbeddingData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingData {
    pub embedding: Vec<f64>,
}

// i2v

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    /// Base64-encoded PNG first frame.
    pub image: String,
    pub prompt: String,
    pub frame_count: u32,
    pub fps: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRef {
    pub job_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollResponse {
    pub status: JobStatus,
}

// track

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRequest {
    pub reference: String,
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResponse {
    pub tracks: Vec<WireTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTrack {
    pub id: u32,
    pub points: Vec<WirePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

// aesthetic

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AestheticRequest {
    pub frame: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AestheticResponse {
    pub score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn chat_request_shape() {
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: vec![
                    ContentPart::Text { text: "hi".into() },
                    ContentPart::Image { image: "AAAA".into() },
                ],
            }],
            response_schema: None,
        };
        assert_eq!(
            serde_json::to_value(&req).unwrap(),
            json!({"model": "m", "messages": [{"role": "user", "content": [
                {"type": "text", "text": "hi"},
                {"type": "image", "image": "AAAA"}
            ]}]})
        );
    }

    #[test]
    fn response_shapes() {
        let chat: ChatResponse =
            serde_json::from_value(json!({"choices": [{"message": {"content": "ok"}}]})).unwrap();
        assert_eq!(chat.choices[0].message.content.as_deref(), Some("ok"));
        let poll: PollResponse = serde_json::from_value(json!({"status": "running"})).unwrap();
        assert_eq!(poll.status, JobStatus::Running);
        let tracks: TrackResponse = serde_json::from_value(
            json!({"tracks": [{"id": 1, "points": [{"x": 1.5, "y": 2.0, "visible": true}]}]}),
        )
        .unwrap();
        assert_eq!(tracks.tracks[0].points[0].x, 1.5);
    }

    #[test]
    fn paths_are_unique_and_reversible() {
        for e in Endpoint::ALL {
            assert_eq!(Endpoint::from_path(e.path()), Some(e));
        }
    }
}
