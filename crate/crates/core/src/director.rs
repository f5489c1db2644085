//! Builds the dope sheet from a story and produces single-dimension patches
//! during refinement.

use image::RgbaImage;
use serde_json::Value;

use crate::backend::wire::{ChatMessage, Role};
use crate::backend::ModelClients;
use crate::dopesheet::{
    self, apply_patch, flatten::shot_dimension_text, validate, DimensionKey, DopeSheet, Linkage, Patch,
    ShotEntry,
};
use crate::imaging::{self, Frame};
use crate::prompts::{self, ask_structured, render, user_message, AskError, MAX_REPAIRS};

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterRef {
    pub name: String,
    pub image: RgbaImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoryInput {
    pub story_id: String,
    pub story_text: String,
    pub character_refs: Vec<CharacterRef>,
    pub scene_ref: Option<Frame>,
}

impl StoryInput {
    /// Story id derived from the text when none is given.
    pub fn new(story_text: impl Into<String>) -> Self {
        let story_text = story_text.into();
        StoryInput {
            story_id: format!("story-{}", &imaging::sha256_hex(story_text.as_bytes())[..12]),
            story_text,
            character_refs: Vec::new(),
            scene_ref: None,
        }
    }

    pub fn check(&self) -> Result<(), DirectorError> {
        if self.story_text.trim().is_empty() {
            return Err(DirectorError::InvalidInput("story text is empty".into()));
        }
        if self.story_id.is_empty()
            || !self
                .story_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            || self.story_id.starts_with('.')
        {
            return Err(DirectorError::InvalidInput(format!(
                "story id {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.story_id
            )));
        }
        Ok(())
    }

    pub fn character_ref(&self, name: &str) -> Option<&RgbaImage> {
        self.character_refs.iter().find(|c| c.name == name).map(|c| &c.image)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DirectorError {
    #[error("invalid story input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Ask(#[from] AskError),
    #[error("consistency score {score} is not below the threshold {threshold}; nothing to refine")]
    GateNotTripped { score: f64, threshold: f64 },
    #[error("shot {shot} is out of range for a {len}-shot sheet")]
    ShotOutOfRange { shot: usize, len: usize },
    #[error("patch targets shot {got_shot} {got}, asked for shot {shot} {expected}")]
    WrongTarget {
        shot: usize,
        expected: DimensionKey,
        got_shot: usize,
        got: DimensionKey,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Built {
    pub sheet: DopeSheet,
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub patch: Patch,
    pub repairs: usize,
}

/// System and user messages for the build request.
pub fn build_messages(input: &StoryInput) -> Vec<ChatMessage> {
    let mut images = Vec::new();
    let mut names = Vec::new();
    for (i, c) in input.character_refs.iter().enumerate() {
        names.push(format!("{} (image {})", c.name, i + 1));
        images.push((format!("Character reference: {}", c.name), imaging::rgba_to_base64_png(&c.image)));
    }
    let scene = match &input.scene_ref {
        Some(f) => {
            images.push(("Scene reference".to_string(), imaging::to_base64_png(f)));
            format!("image {}", images.len())
        }
        None => "none".to_string(),
    };
    let characters = if names.is_empty() {
        "none".to_string()
    } else {
        names.join(", ")
    };
    vec![
        ChatMessage::text(
            Role::System,
            render(prompts::DIRECTOR_BUILD, &[("SCHEMA", prompts::DOPESHEET_SCHEMA)]),
        ),
        user_message(
            render(
                prompts::DIRECTOR_BUILD_USER,
                &[
                    ("STORY", input.story_text.trim()),
                    ("CHARACTERS", &characters),
                    ("SCENE_REF", &scene),
                ],
            ),
            images,
        ),
    ]
}

/// Asks the chat backend for a dope sheet, repairing invalid replies up to
/// twice. The returned sheet always validates.
pub fn build_dope_sheet(input: &StoryInput, clients: &ModelClients) -> Result<Built, DirectorError> {
    input.check()?;
    let schema: Value = serde_json::from_str(prompts::DOPESHEET_SCHEMA).expect("bundled schema is JSON");
    let answer = ask_structured(clients, build_messages(input), Some(&schema), MAX_REPAIRS, |reply| {
        parse_sheet_reply(reply, &input.story_id)
    })?;
    Ok(Built {
        sheet: answer.value,
        repairs: answer.repairs,
    })
}

/// Parses a director reply, filling in what models commonly leave out:
/// missing linkage flags, missing shot indices and missing character names.
pub fn parse_sheet_reply(reply: &str, story_id: &str) -> Result<DopeSheet, String> {
    let mut value: Value = serde_json::from_str(prompts::extract_json(reply))
        .map_err(|e| format!("reply is not a JSON document: {e}"))?;
    let mut unlinked = Vec::new();
    if let Some(obj) = value.as_object_mut() {
        obj.insert("story_id".into(), Value::String(story_id.to_string()));
        obj.entry("style").or_insert_with(|| Value::String(String::new()));
    }
    if let Some(shots) = value.get_mut("shots").and_then(Value::as_array_mut) {
        for (i, shot) in shots.iter_mut().enumerate() {
            let Some(shot) = shot.as_object_mut() else { continue };
            shot.entry("index").or_insert(Value::from(i));
            if !shot.contains_key("linkage") || shot["linkage"].is_null() {
                shot.insert("linkage".into(), Value::String("F".into()));
                unlinked.push(i);
            }
            if let Some(chars) = shot.get_mut("characters").and_then(Value::as_array_mut) {
                for (k, c) in chars.iter_mut().enumerate() {
                    if let Some(c) = c.as_object_mut() {
                        let unnamed = c.get("name").and_then(Value::as_str).is_none_or(|n| n.trim().is_empty());
                        if unnamed {
                            c.insert("name".into(), Value::String(format!("character_{}", k + 1)));
                        }
                    }
                }
            }
        }
    }
    let text = serde_json::to_string(&value).expect("json");
    let mut ds = dopesheet::parse(&text).map_err(|e| e.to_string())?;
    for i in unlinked {
        ds.shots[i].linkage = default_linkage(&ds.shots, i);
    }
    let report = validate(&ds);
    if !report.is_valid() {
        let lines: Vec<String> = report.violations.iter().map(|v| format!("- {v}")).collect();
        return Err(format!("the dope sheet has violations:\n{}", lines.join("\n")));
    }
    Ok(ds)
}

/// T when the shot shares its environment text and at least one character
/// with the previous shot.
pub fn default_linkage(shots: &[ShotEntry], index: usize) -> Linkage {
    if index == 0 || index >= shots.len() {
        return Linkage::F;
    }
    let (prev, cur) = (&shots[index - 1], &shots[index]);
    let same_scene = prev.scene.environment == cur.scene.environment;
    let shared = cur.characters.iter().any(|c| prev.character(&c.name).is_some());
    Linkage::from(same_scene && shared)
}

/// What the reviewer saw for the dimension being refined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence<'a> {
    /// Flattened caption text, absent when captioning failed.
    pub caption_entry: Option<&'a str>,
    pub score: Option<f64>,
}

pub fn refine_messages(ds: &DopeSheet, shot: usize, d: DimensionKey, evidence: Evidence<'_>) -> Vec<ChatMessage> {
    let entry = &ds.shots[shot];
    let mut context = format!(
        "Story style: {}\nShot {} of {}; linkage {}",
        ds.style,
        shot,
        ds.shots.len(),
        entry.linkage.as_str()
    );
    for key in DimensionKey::ALL {
        context.push('\n');
        context.push_str(&shot_dimension_text(entry, key));
    }
    let original = serde_json::to_string_pretty(&entry.dimension(d).to_json()).expect("json");
    let score = evidence.score.map_or("unavailable".to_string(), |s| format!("{s:.4}"));
    let caption = evidence.caption_entry.unwrap_or("unavailable (the caption could not be parsed)");
    let shot_s = shot.to_string();
    vec![
        ChatMessage::text(
            Role::System,
            render(
                prompts::DIRECTOR_REFINE,
                &[("SHOT", &shot_s), ("DIMENSION", d.name()), ("SCORE", &score)],
            ),
        ),
        ChatMessage::text(
            Role::User,
            render(
                prompts::DIRECTOR_REFINE_USER,
                &[("CONTEXT", &context), ("ORIGINAL_ENTRY", &original), ("CAPTION_ENTRY", caption)],
            ),
        ),
    ]
}

/// Asks for a replacement of one dimension of one shot. Replies aimed at any
/// other target are rejected outright rather than repaired.
pub fn refine_dimension(
    ds: &DopeSheet,
    shot: usize,
    d: DimensionKey,
    evidence: Evidence<'_>,
    threshold: f64,
    clients: &ModelClients,
) -> Result<Refined, DirectorError> {
    if shot >= ds.shots.len() {
        return Err(DirectorError::ShotOutOfRange {
            shot,
            len: ds.shots.len(),
        });
    }
    if let Some(score) = evidence.score {
        if score >= threshold {
            return Err(DirectorError::GateNotTripped { score, threshold });
        }
    }
    let answer = ask_structured(clients, refine_messages(ds, shot, d, evidence), None, MAX_REPAIRS, |reply| {
        let patch: Patch = serde_json::from_str(prompts::extract_json(reply))
            .map_err(|e| format!("reply is not a valid patch object: {e}"))?;
        if patch.shot_index != shot || patch.dimension() != d {
            return Ok(Err(DirectorError::WrongTarget {
                shot,
                expected: d,
                got_shot: patch.shot_index,
                got: patch.dimension(),
            }));
        }
        apply_patch(ds, &patch).map_err(|e| e.to_string())?;
        Ok(Ok(patch))
    })?;
    let patch = answer.value?;
    Ok(Refined {
        patch,
        repairs: answer.repairs,
    })
}
