//! The textual dope sheet: a per-shot script organised into five dimensions.
//!
//! A [`DopeSheet`] is the contract between the director, the artist and the
//! reviewers. Everything here is plain data; the canonical on-disk form is
//! produced by [`codec`], the per-dimension embedding text by [`flatten`].

pub mod codec;
pub mod flatten;
pub mod patch;
pub mod validate;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use codec::{load, parse, serialize, LoadError, ParseError};
pub use flatten::{dimension_text, shot_dimension_text};
pub use patch::{apply_patch, changed_dimensions, DimensionValue, Patch, PatchError, SheetDiff};
pub use validate::{validate, validate_shot, ValidationReport, Violation};

/// Token allowed in relationship participants besides declared character names.
pub const ENVIRONMENT_PARTICIPANT: &str = "environment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopeSheet {
    pub story_id: String,
    /// Artistic style shared by every shot.
    pub style: String,
    pub shots: Vec<ShotEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotEntry {
    pub index: usize,
    pub characters: Vec<CharacterSpec>,
    pub shot: ShotSpec,
    pub scene: SceneSpec,
    pub composition: CompositionSpec,
    pub relationships: Vec<RelationshipSpec>,
    pub linkage: Linkage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterSpec {
    pub name: String,
    pub entity_type: String,
    pub clothing: String,
    pub appearance: String,
    pub props: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotSpec {
    pub emotion: String,
    pub description: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub environment: String,
    pub key_props: Vec<String>,
    pub style: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSpec {
    pub framing: String,
    pub camera_angle: String,
    pub layout: Vec<LayoutSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSlot {
    pub character: String,
    pub anchor: Anchor,
    /// Character height as a fraction of canvas height, in (0, 1].
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Left,
    Right,
    Center,
    Above,
    Below,
}

impl Anchor {
    pub const ALL: [Anchor; 5] = [
        Anchor::Left,
        Anchor::Right,
        Anchor::Center,
        Anchor::Above,
        Anchor::Below,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Anchor::Left => "left",
            Anchor::Right => "right",
            Anchor::Center => "center",
            Anchor::Above => "above",
            Anchor::Below => "below",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationshipSpec {
    pub participants: Vec<String>,
    pub interaction_type: String,
    pub detail: String,
}

/// Whether a shot starts from the previous shot's selected frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Linkage {
    T,
    #[default]
    F,
}

impl Linkage {
    pub fn is_linked(self) -> bool {
        self == Linkage::T
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::T => "T",
            Linkage::F => "F",
        }
    }
}

impl From<bool> for Linkage {
    fn from(linked: bool) -> Self {
        if linked {
            Linkage::T
        } else {
            Linkage::F
        }
    }
}

impl Serialize for Linkage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Linkage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(deserializer)?;
        match raw.as_str() {
            Some("T") => Ok(Linkage::T),
            Some("F") => Ok(Linkage::F),
            _ => Err(serde::de::Error::custom("linkage must be T or F")),
        }
    }
}

/// The five dimensions of a shot entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DimensionKey {
    Characters,
    Shots,
    Scene,
    Composition,
    Relationships,
}

impl DimensionKey {
    pub const ALL: [DimensionKey; 5] = [
        DimensionKey::Characters,
        DimensionKey::Shots,
        DimensionKey::Scene,
        DimensionKey::Composition,
        DimensionKey::Relationships,
    ];

    /// Key prefix used in flattened text; also the JSON key inside a shot entry
    /// for every dimension except `Shots`, whose JSON key is `shot`.
    pub fn prefix(self) -> &'static str {
        match self {
            DimensionKey::Characters => "characters",
            DimensionKey::Shots => "shot",
            DimensionKey::Scene => "scene",
            DimensionKey::Composition => "composition",
            DimensionKey::Relationships => "relationships",
        }
    }

    pub fn json_key(self) -> &'static str {
        self.prefix()
    }

    pub fn parse(name: &str) -> Option<DimensionKey> {
        DimensionKey::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(name) || d.prefix() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            DimensionKey::Characters => "Characters",
            DimensionKey::Shots => "Shots",
            DimensionKey::Scene => "Scene",
            DimensionKey::Composition => "Composition",
            DimensionKey::Relationships => "Relationships",
        }
    }
}

impl fmt::Display for DimensionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl DopeSheet {
    pub fn shot(&self, index: usize) -> Option<&ShotEntry> {
        self.shots.get(index)
    }
}

impl ShotEntry {
    pub fn character(&self, name: &str) -> Option<&CharacterSpec> {
        self.characters.iter().find(|c| c.name == name)
    }

    pub fn dimension(&self, key: DimensionKey) -> DimensionValue {
        match key {
            DimensionKey::Characters => DimensionValue::Characters(self.characters.clone()),
            DimensionKey::Shots => DimensionValue::Shots(self.shot.clone()),
            DimensionKey::Scene => DimensionValue::Scene(self.scene.clone()),
            DimensionKey::Composition => DimensionValue::Composition(self.composition.clone()),
            DimensionKey::Relationships => {
                DimensionValue::Relationships(self.relationships.clone())
            }
        }
    }
}

/// Small sample sheets for examples and tests.
pub mod fixtures {
    use super::*;

    pub fn character(name: &str) -> CharacterSpec {
        CharacterSpec {
            name: name.to_string(),
            entity_type: "person".to_string(),
            clothing: "red coat".to_string(),
            appearance: "short black hair".to_string(),
            props: vec!["backpack".to_string()],
        }
    }

    pub fn shot(index: usize, linkage: Linkage) -> ShotEntry {
        ShotEntry {
            index,
            characters: vec![character("Mia")],
            shot: ShotSpec {
                emotion: "curious".to_string(),
                description: format!("Mia explores the forest, beat {index}"),
                action: "walks forward".to_string(),
            },
            scene: SceneSpec {
                environment: "forest".to_string(),
                key_props: vec!["lantern".to_string()],
                style: "watercolor".to_string(),
            },
            composition: CompositionSpec {
                framing: "medium shot".to_string(),
                camera_angle: "eye level".to_string(),
                layout: vec![LayoutSlot {
                    character: "Mia".to_string(),
                    anchor: Anchor::Left,
                    scale: 0.5,
                }],
            },
            relationships: vec![RelationshipSpec {
                participants: vec!["Mia".to_string(), ENVIRONMENT_PARTICIPANT.to_string()],
                interaction_type: "exploration".to_string(),
                detail: "Mia peers into the trees".to_string(),
            }],
            linkage,
        }
    }

    pub fn sheet(n: usize) -> DopeSheet {
        DopeSheet {
            story_id: "forest-walk".to_string(),
            style: "watercolor".to_string(),
            shots: (0..n)
                .map(|i| shot(i, Linkage::from(i > 0)))
                .collect(),
        }
    }
}
