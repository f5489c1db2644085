#![allow(dead_code)]

use std::sync::Arc;

use image::{Rgba, RgbaImage};
use proptest::prelude::*;
use storyboard_core::artist::Canvas;
use storyboard_core::backend::sim::{Exhausted, Scenario, SimBackend};
use storyboard_core::backend::{BackendConfig, ModelClients};
use storyboard_core::director::{CharacterRef, StoryInput};
use storyboard_core::dopesheet::{
    Anchor, CharacterSpec, CompositionSpec, DopeSheet, LayoutSlot, Linkage, RelationshipSpec, SceneSpec, ShotEntry,
    ShotSpec,
};
use storyboard_core::pipeline::{RunConfig, VideoSettings};

pub fn clients(sim: Arc<SimBackend>) -> ModelClients {
    let mut cfg = BackendConfig::default();
    cfg.i2v.poll_interval_secs = 0.0001;
    ModelClients::new(sim, cfg)
}

/// Sim scenario whose director writes one shot per sentence.
pub fn scenario(seed: u64) -> Scenario {
    let mut s = Scenario { seed, ..Scenario::default() };
    s.chat.director.when_exhausted = Some(Exhausted::Procedural);
    s
}

pub fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        video: VideoSettings { frame_count: 8, fps: 8 },
        canvas: Canvas { width: 64, height: 36, background: [90, 90, 90] },
        ..RunConfig::default()
    }
}

pub fn sprite(color: [u8; 3]) -> RgbaImage {
    let mut img = RgbaImage::from_pixel(6, 12, Rgba([color[0], color[1], color[2], 255]));
    img.put_pixel(0, 0, Rgba([0, 0, 0, 0]));
    img
}

pub fn story(id: &str, text: &str, names: &[&str]) -> StoryInput {
    StoryInput {
        story_id: id.into(),
        character_refs: names
            .iter()
            .enumerate()
            .map(|(i, n)| CharacterRef { name: n.to_string(), image: sprite([200, 40 * i as u8, 60]) })
            .collect(),
        ..StoryInput::new(text)
    }
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-zA-Z0-9 ,'\\-\u{e9}\u{4e2d}\"\\\\]{0,14}"
}

fn shot_entry(index: usize) -> impl Strategy<Value = ShotEntry> {
    let names = prop::sample::subsequence(vec!["Mia", "Leo", "Ana", "Kit"], 0..=3);
    (names, any::<bool>(), text(), text(), text(), text(), text(), prop::collection::vec(text(), 0..3))
        .prop_flat_map(move |(names, link, a, b, c, d, e, props)| {
            let n = names.len();
            let layout = prop::collection::vec((0..n.max(1), prop::sample::select(Anchor::ALL.to_vec()), 0.001f64..=1.0), if n == 0 { 0..1 } else { 0..n + 1 });
            let rels = prop::collection::vec((prop::collection::vec(0..=n, 1..3), text(), text()), 0..3);
            (Just((names, link, a, b, c, d, e, props)), layout, rels)
        })
        .prop_map(move |((names, link, a, b, c, d, e, props), layout, rels)| {
            let chars: Vec<CharacterSpec> = names
                .iter()
                .map(|n| CharacterSpec {
                    name: n.to_string(),
                    entity_type: a.clone(),
                    clothing: b.clone(),
                    appearance: c.clone(),
                    props: props.clone(),
                })
                .collect();
            let participant = |k: usize| names.get(k).map_or("environment".to_string(), |s| s.to_string());
            ShotEntry {
                index,
                shot: ShotSpec { emotion: a.clone(), description: d.clone(), action: e.clone() },
                scene: SceneSpec { environment: c.clone(), key_props: props.clone(), style: b.clone() },
                composition: CompositionSpec {
                    framing: d.clone(),
                    camera_angle: e.clone(),
                    layout: layout
                        .into_iter()
                        .filter(|_| !names.is_empty())
                        .map(|(k, anchor, scale)| LayoutSlot { character: names[k].to_string(), anchor, scale })
                        .collect(),
                },
                relationships: rels
                    .into_iter()
                    .map(|(ps, t, detail)| RelationshipSpec {
                        participants: ps.into_iter().map(participant).collect(),
                        interaction_type: t,
                        detail,
                    })
                    .collect(),
                linkage: Linkage::from(index > 0 && link),
                characters: chars,
            }
        })
}

/// Structurally valid dope sheets of one to six shots.
pub fn arb_sheet() -> impl Strategy<Value = DopeSheet> {
    (1usize..=6, text(), text()).prop_flat_map(|(n, id, style)| {
        let shots: Vec<_> = (0..n).map(shot_entry).collect();
        (Just(id), Just(style), shots).prop_map(|(id, style, shots)| DopeSheet { story_id: id, style, shots })
    })
}
