//! Canonical text for one dimension of one shot; this is the string that gets
//! embedded when comparing an original entry against a captioned one.
//!
//! Grammar: `<prefix>: <field>; <field>; ...`. List items are joined with
//! `" | "`, structured list items render their own fields joined with `"; "`.
//! An empty top-level list renders as the bare `<prefix>:`.

use super::{
    CharacterSpec, CompositionSpec, DimensionKey, DimensionValue, DopeSheet, LayoutSlot,
    RelationshipSpec, SceneSpec, ShotEntry, ShotSpec,
};

const FIELD_SEP: &str = "; ";
const ITEM_SEP: &str = " | ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("shot {shot} out of range (sheet has {len} shots)")]
pub struct ShotOutOfRange {
    pub shot: usize,
    pub len: usize,
}

pub fn dimension_text(ds: &DopeSheet, shot: usize, d: DimensionKey) -> Result<String, ShotOutOfRange> {
    let entry = ds.shot(shot).ok_or(ShotOutOfRange {
        shot,
        len: ds.shots.len(),
    })?;
    Ok(shot_dimension_text(entry, d))
}

pub fn shot_dimension_text(entry: &ShotEntry, d: DimensionKey) -> String {
    value_text(&entry.dimension(d))
}

/// Flattens a free-standing dimension value (e.g. a patch replacement).
pub fn value_text(value: &DimensionValue) -> String {
    let body = match value {
        DimensionValue::Characters(cs) => items(cs, character),
        DimensionValue::Shots(s) => shot_spec(s),
        DimensionValue::Scene(s) => scene(s),
        DimensionValue::Composition(c) => composition(c),
        DimensionValue::Relationships(rs) => items(rs, relationship),
    };
    let prefix = value.key().prefix();
    if body.is_empty() {
        format!("{prefix}:")
    } else {
        format!("{prefix}: {body}")
    }
}

fn items<T>(list: &[T], render: fn(&T) -> String) -> String {
    list.iter().map(render).collect::<Vec<_>>().join(ITEM_SEP)
}

fn strings(list: &[String]) -> String {
    list.join(ITEM_SEP)
}

fn fields(parts: &[&str]) -> String {
    parts.join(FIELD_SEP)
}

fn character(c: &CharacterSpec) -> String {
    fields(&[&c.name, &c.entity_type, &c.clothing, &c.appearance, &strings(&c.props)])
}

fn shot_spec(s: &ShotSpec) -> String {
    fields(&[&s.emotion, &s.description, &s.action])
}

fn scene(s: &SceneSpec) -> String {
    fields(&[&s.environment, &strings(&s.key_props), &s.style])
}

fn layout_slot(slot: &LayoutSlot) -> String {
    fields(&[&slot.character, slot.anchor.as_str(), &slot.scale.to_string()])
}

fn composition(c: &CompositionSpec) -> String {
    fields(&[&c.framing, &c.camera_angle, &items(&c.layout, layout_slot)])
}

fn relationship(r: &RelationshipSpec) -> String {
    fields(&[&strings(&r.participants), &r.interaction_type, &r.detail])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dopesheet::fixtures;

    #[test]
    fn scene_flattening_matches_hand_application() {
        let scene = SceneSpec {
            environment: "forest".into(),
            key_props: vec!["lantern".into()],
            style: "watercolor".into(),
        };
        assert_eq!(
            value_text(&DimensionValue::Scene(scene)),
            "scene: forest; lantern; watercolor"
        );
    }

    #[test]
    fn empty_relationships() {
        assert_eq!(value_text(&DimensionValue::Relationships(vec![])), "relationships:");
    }

    #[test]
    fn every_prefix_is_lowercase_and_fixed() {
        let ds = fixtures::sheet(1);
        let texts: Vec<String> = DimensionKey::ALL
            .iter()
            .map(|d| dimension_text(&ds, 0, *d).unwrap())
            .collect();
        assert_eq!(
            texts,
            vec![
                "characters: Mia; person; red coat; short black hair; backpack",
                "shot: curious; Mia explores the forest, beat 0; walks forward",
                "scene: forest; lantern; watercolor",
                "composition: medium shot; eye level; Mia; left; 0.5",
                "relationships: Mia | environment; exploration; Mia peers into the trees",
            ]
        );
    }

    #[test]
    fn identical_sheets_flatten_identically() {
        let a = fixtures::sheet(3);
        let b = fixtures::sheet(3);
        for shot in 0..3 {
            for d in DimensionKey::ALL {
                assert_eq!(
                    dimension_text(&a, shot, d).unwrap().as_bytes(),
                    dimension_text(&b, shot, d).unwrap().as_bytes()
                );
            }
        }
    }

    #[test]
    fn out_of_range_shot() {
        let ds = fixtures::sheet(2);
        assert_eq!(
            dimension_text(&ds, 2, DimensionKey::Scene),
            Err(ShotOutOfRange { shot: 2, len: 2 })
        );
    }

    #[test]
    fn json_key_order_does_not_matter() {
        let a = r#"{"environment":"forest","key_props":["lantern","rope"],"style":"ink"}"#;
        let b = r#"{"style":"ink","key_props":["lantern","rope"],"environment":"forest"}"#;
        let a: SceneSpec = serde_json::from_str(a).unwrap();
        let b: SceneSpec = serde_json::from_str(b).unwrap();
        assert_eq!(
            value_text(&DimensionValue::Scene(a)),
            value_text(&DimensionValue::Scene(b))
        );
    }
}
