//! Versioned prompt templates and the bounded repair conversation.
//!
//! Templates live as text assets under `prompts/`. Each system template starts
//! with a task header such as `[task:director.refine v1 shot=2 dimension=Scene]`
//! which identifies the request kind to backends that route on it (the
//! simulation backend does).

use std::collections::BTreeMap;

use crate::backend::wire::{ChatMessage, ContentPart, Role};
use crate::backend::{BackendError, ModelClients};

pub const PROMPT_VERSION: &str = "v1";

pub const DIRECTOR_BUILD: &str = include_str!("../prompts/director_build.txt");
pub const DIRECTOR_BUILD_USER: &str = include_str!("../prompts/director_build_user.txt");
pub const DIRECTOR_REFINE: &str = include_str!("../prompts/director_refine.txt");
pub const DIRECTOR_REFINE_USER: &str = include_str!("../prompts/director_refine_user.txt");
pub const REVIEWER_CAPTION: &str = include_str!("../prompts/reviewer_caption.txt");
pub const REVIEWER_CRITIC: &str = include_str!("../prompts/reviewer_critic.txt");
pub const REVIEWER_CRITIC_USER: &str = include_str!("../prompts/reviewer_critic_user.txt");
pub const REPAIR: &str = include_str!("../prompts/repair.txt");

/// JSON Schema of the dope-sheet file format.
pub const DOPESHEET_SCHEMA: &str = include_str!("../assets/dopesheet.schema.json");

/// Repair prompts allowed after the first reply; three replies in total.
pub const MAX_REPAIRS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    DirectorBuild,
    DirectorRefine,
    ReviewerCaption,
    ReviewerCritic,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::DirectorBuild,
        Task::DirectorRefine,
        Task::ReviewerCaption,
        Task::ReviewerCritic,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Task::DirectorBuild => "director.build",
            Task::DirectorRefine => "director.refine",
            Task::ReviewerCaption => "reviewer.caption",
            Task::ReviewerCritic => "reviewer.critic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskHeader {
    pub task: Task,
    pub version: String,
    pub params: BTreeMap<String, String>,
}

/// Finds the first `[task:...]` header in `text`.
pub fn parse_task_header(text: &str) -> Option<TaskHeader> {
    let start = text.find("[task:")?;
    let rest = &text[start + "[task:".len()..];
    let inner = &rest[..rest.find(']')?];
    let mut words = inner.split_whitespace();
    let tag = words.next()?;
    let task = Task::ALL.into_iter().find(|t| t.tag() == tag)?;
    let mut version = String::new();
    let mut params = BTreeMap::new();
    for w in words {
        match w.split_once('=') {
            Some((k, v)) => {
                params.insert(k.to_string(), v.to_string());
            }
            None => version = w.to_string(),
        }
    }
    Some(TaskHeader {
        task,
        version,
        params,
    })
}

/// Replaces each `{KEY}` with its value. Unknown placeholders are left alone.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Pulls the JSON payload out of a model reply: the body of the first fenced
/// block if there is one, otherwise the span from the first `{` or `[` to the
/// last matching closer.
pub fn extract_json(reply: &str) -> &str {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim();
        }
    }
    let open = reply.find(['{', '[']);
    match open {
        Some(i) => {
            let closer = if reply.as_bytes()[i] == b'{' { '}' } else { ']' };
            match reply.rfind(closer) {
                Some(j) if j > i => &reply[i..=j],
                _ => reply[i..].trim(),
            }
        }
        None => reply.trim(),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AskError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no usable reply after {attempts} attempts: {diagnostics}")]
    Unparseable { attempts: usize, diagnostics: String },
}

/// Outcome of a structured conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct Answer<T> {
    pub value: T,
    /// Repair prompts that were needed.
    pub repairs: usize,
}

/// Asks for a structured reply, re-prompting with the parser's diagnostics up
/// to `max_repairs` times.
pub fn ask_structured<T>(
    clients: &ModelClients,
    mut messages: Vec<ChatMessage>,
    schema: Option<&serde_json::Value>,
    max_repairs: usize,
    mut parse: impl FnMut(&str) -> Result<T, String>,
) -> Result<Answer<T>, AskError> {
    let mut diagnostics = String::new();
    for attempt in 0..=max_repairs {
        let reply = clients.chat(&messages, schema)?;
        match parse(&reply) {
            Ok(value) => {
                return Ok(Answer {
                    value,
                    repairs: attempt,
                })
            }
            Err(diag) => {
                log::debug!("structured reply rejected (attempt {}): {diag}", attempt + 1);
                diagnostics = diag;
                messages.push(ChatMessage::text(Role::Assistant, reply));
                messages.push(ChatMessage::text(
                    Role::User,
                    render(REPAIR, &[("DIAGNOSTICS", &diagnostics)]),
                ));
            }
        }
    }
    Err(AskError::Unparseable {
        attempts: max_repairs + 1,
        diagnostics,
    })
}

/// A user message made of a text part followed by labelled images.
pub fn user_message(text: String, images: Vec<(String, String)>) -> ChatMessage {
    let mut content = vec![ContentPart::Text { text }];
    for (label, image) in images {
        content.push(ContentPart::Text { text: label });
        content.push(ContentPart::Image { image });
    }
    ChatMessage {
        role: Role::User,
        content,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_carry_parseable_headers() {
        let refine = render(DIRECTOR_REFINE, &[("SHOT", "2"), ("DIMENSION", "Scene"), ("SCORE", "0.5")]);
        let h = parse_task_header(&refine).unwrap();
        assert_eq!(h.task, Task::DirectorRefine);
        assert_eq!(h.version, PROMPT_VERSION);
        assert_eq!(h.params["shot"], "2");
        assert_eq!(h.params["dimension"], "Scene");
        for (t, task) in [
            (DIRECTOR_BUILD, Task::DirectorBuild),
            (REVIEWER_CAPTION, Task::ReviewerCaption),
            (REVIEWER_CRITIC, Task::ReviewerCritic),
        ] {
            assert_eq!(parse_task_header(t).unwrap().task, task);
        }
    }

    #[test]
    fn documented_placeholders_exist() {
        assert!(DIRECTOR_BUILD_USER.contains("{STORY}"));
        assert!(DIRECTOR_BUILD.contains("{SCHEMA}"));
        assert!(REPAIR.contains("{DIAGNOSTICS}"));
        assert!(DIRECTOR_REFINE_USER.contains("{ORIGINAL_ENTRY}"));
        assert!(DIRECTOR_REFINE_USER.contains("{CAPTION_ENTRY}"));
        assert!(DIRECTOR_REFINE.contains("{SCORE}"));
    }

    #[test]
    fn schema_declares_the_five_dimensions() {
        let schema: serde_json::Value = serde_json::from_str(DOPESHEET_SCHEMA).unwrap();
        let required = schema["$defs"]["ShotEntry"]["required"].as_array().unwrap();
        for key in ["characters", "shot", "scene", "composition", "relationships", "linkage"] {
            assert!(required.iter().any(|v| v == key), "{key}");
        }
    }

    #[test]
    fn json_extraction() {
        assert_eq!(extract_json("```json\n{\"a\": 1}\n```"), "{\"a\": 1}");
        assert_eq!(extract_json("Sure! {\"a\": {\"b\": 2}} hope that helps"), "{\"a\": {\"b\": 2}}");
        assert_eq!(extract_json("  [1, 2] "), "[1, 2]");
        assert_eq!(extract_json("no json"), "no json");
    }

    #[test]
    fn render_leaves_unknown_placeholders() {
        assert_eq!(render("{A} {B}", &[("A", "x")]), "x {B}");
    }
}
