use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    validate_shot, CharacterSpec, CompositionSpec, DimensionKey, DopeSheet, RelationshipSpec,
    SceneSpec, ShotSpec, ValidationReport,
};

/// A complete replacement value for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum DimensionValue {
    Characters(Vec<CharacterSpec>),
    Shots(ShotSpec),
    Scene(SceneSpec),
    Composition(CompositionSpec),
    Relationships(Vec<RelationshipSpec>),
}

impl DimensionValue {
    pub fn key(&self) -> DimensionKey {
        match self {
            DimensionValue::Characters(_) => DimensionKey::Characters,
            DimensionValue::Shots(_) => DimensionKey::Shots,
            DimensionValue::Scene(_) => DimensionKey::Scene,
            DimensionValue::Composition(_) => DimensionKey::Composition,
            DimensionValue::Relationships(_) => DimensionKey::Relationships,
        }
    }

    /// Decodes `value` as the payload of `key`, rejecting unknown fields.
    pub fn from_json(key: DimensionKey, value: Value) -> Result<Self, serde_json::Error> {
        Ok(match key {
            DimensionKey::Characters => DimensionValue::Characters(serde_json::from_value(value)?),
            DimensionKey::Shots => DimensionValue::Shots(serde_json::from_value(value)?),
            DimensionKey::Scene => DimensionValue::Scene(serde_json::from_value(value)?),
            DimensionKey::Composition => {
                DimensionValue::Composition(serde_json::from_value(value)?)
            }
            DimensionKey::Relationships => {
                DimensionValue::Relationships(serde_json::from_value(value)?)
            }
        })
    }

    pub fn to_json(&self) -> Value {
        let v = match self {
            DimensionValue::Characters(x) => serde_json::to_value(x),
            DimensionValue::Shots(x) => serde_json::to_value(x),
            DimensionValue::Scene(x) => serde_json::to_value(x),
            DimensionValue::Composition(x) => serde_json::to_value(x),
            DimensionValue::Relationships(x) => serde_json::to_value(x),
        };
        v.expect("dimension values always serialize")
    }
}

/// A localized update to exactly one dimension of one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatchRepr", into = "PatchRepr")]
pub struct Patch {
    pub shot_index: usize,
    pub replacement: DimensionValue,
    pub reason: String,
}

impl Patch {
    pub fn dimension(&self) -> DimensionKey {
        self.replacement.key()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchRepr {
    shot_index: usize,
    dimension: DimensionKey,
    replacement: Value,
    reason: String,
}

impl TryFrom<PatchRepr> for Patch {
    type Error = String;

    fn try_from(repr: PatchRepr) -> Result<Self, Self::Error> {
        let replacement = DimensionValue::from_json(repr.dimension, repr.replacement)
            .map_err(|e| format!("replacement is not a valid {} value: {e}", repr.dimension))?;
        Ok(Patch {
            shot_index: repr.shot_index,
            replacement,
            reason: repr.reason,
        })
    }
}

impl From<Patch> for PatchRepr {
    fn from(p: Patch) -> Self {
        PatchRepr {
            shot_index: p.shot_index,
            dimension: p.dimension(),
            replacement: p.replacement.to_json(),
            reason: p.reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatchError {
    #[error("patch targets unknown shot {shot} (sheet has {len} shots)")]
    UnknownShot { shot: usize, len: usize },
    #[error("replacement for shot {shot} / {dimension} fails validation: {report}")]
    InvalidReplacement {
        shot: usize,
        dimension: DimensionKey,
        report: ValidationReport,
    },
}

/// Returns a copy of `ds` with one dimension of one shot replaced.
///
/// The patched shot is re-validated as a whole, so a replacement that breaks a
/// cross-dimension reference (say, removing a character still named in the
/// layout) is rejected.
pub fn apply_patch(ds: &DopeSheet, p: &Patch) -> Result<DopeSheet, PatchError> {
    let len = ds.shots.len();
    let mut out = ds.clone();
    let entry = out.shots.get_mut(p.shot_index).ok_or(PatchError::UnknownShot {
        shot: p.shot_index,
        len,
    })?;
    match &p.replacement {
        DimensionValue::Characters(v) => entry.characters = v.clone(),
        DimensionValue::Shots(v) => entry.shot = v.clone(),
        DimensionValue::Scene(v) => entry.scene = v.clone(),
        DimensionValue::Composition(v) => entry.composition = v.clone(),
        DimensionValue::Relationships(v) => entry.relationships = v.clone(),
    }
    let report = validate_shot(entry);
    if !report.is_valid() {
        return Err(PatchError::InvalidReplacement {
            shot: p.shot_index,
            dimension: p.dimension(),
            report,
        });
    }
    Ok(out)
}

/// Where two sheets differ, compared on canonical serialized bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SheetDiff {
    /// `(shot, dimension)` pairs whose serialized subtree changed.
    pub dimensions: BTreeSet<(usize, DimensionKey)>,
    /// Anything outside the five dimensions changed: story id, style, shot
    /// count, an index or a linkage flag.
    pub structural: bool,
}

impl SheetDiff {
    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty() && !self.structural
    }
}

pub fn changed_dimensions(a: &DopeSheet, b: &DopeSheet) -> SheetDiff {
    let mut diff = SheetDiff {
        structural: a.story_id != b.story_id
            || a.style != b.style
            || a.shots.len() != b.shots.len(),
        ..SheetDiff::default()
    };
    for (sa, sb) in a.shots.iter().zip(&b.shots) {
        if sa.index != sb.index || sa.linkage != sb.linkage {
            diff.structural = true;
        }
        for d in DimensionKey::ALL {
            let ja = serde_json::to_vec(&sa.dimension(d).to_json()).expect("serializable");
            let jb = serde_json::to_vec(&sb.dimension(d).to_json()).expect("serializable");
            if ja != jb {
                diff.dimensions.insert((sa.index, d));
            }
        }
    }
    diff
}
