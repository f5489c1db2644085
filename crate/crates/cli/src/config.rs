use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use storyboard_core::backend::BackendConfig;
use storyboard_core::director::{CharacterRef, StoryInput};
use storyboard_core::pipeline::RunConfig;

/// Contents of `--config`: run settings and backend endpoints.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub run: RunConfig,
    pub backends: Option<BackendConfig>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CharacterFile {
    name: String,
    image: PathBuf,
}

/// A story file. Image paths are relative to the file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoryFile {
    #[serde(default)]
    story_id: Option<String>,
    text: String,
    #[serde(default)]
    characters: Vec<CharacterFile>,
    #[serde(default)]
    scene_ref: Option<PathBuf>,
}

fn open_image(base: &Path, rel: &Path) -> Result<image::DynamicImage> {
    let path = base.join(rel);
    image::open(&path).with_context(|| format!("loading image {}", path.display()))
}

pub fn load_story(path: &Path) -> Result<StoryInput> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: StoryFile = serde_json::from_str(&text).with_context(|| format!("parsing story {}", path.display()))?;
    if file.text.trim().is_empty() {
        bail!("story {} has no text", path.display());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut input = StoryInput::new(file.text);
    if let Some(id) = file.story_id {
        input.story_id = id;
    }
    for c in file.characters {
        input.character_refs.push(CharacterRef { image: open_image(base, &c.image)?.to_rgba8(), name: c.name });
    }
    if let Some(scene) = file.scene_ref {
        input.scene_ref = Some(open_image(base, &scene)?.to_rgb8());
    }
    Ok(input)
}
