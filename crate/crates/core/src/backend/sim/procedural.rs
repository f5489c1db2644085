//! Seeded content generators behind the simulation backend. Everything here is
//! a pure function of its arguments.

use image::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::backend::wire::{WirePoint, WireTrack};
use crate::dopesheet::{
    Anchor, CharacterSpec, CompositionSpec, DimensionKey, DopeSheet, LayoutSlot, Linkage,
    RelationshipSpec, SceneSpec, ShotEntry, ShotSpec, ENVIRONMENT_PARTICIPANT,
};
use crate::imaging::Frame;

pub fn rng_for(seed: u64, domain: &str, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed hash-bag of lowercase alphanumeric tokens, scaled to unit length.
/// Text without tokens maps to the zero vector.
pub fn hash_bag_embedding(text: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim.max(1)];
    for tok in tokens(text) {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(tok.as_bytes());
        let d = h.finalize();
        let bucket = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as usize % v.len();
        v[bucket] += if d[8] & 1 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Frame `t` is frame 0 circularly shifted along a seeded path whose speed
/// peaks once, with a mild brightness drift. Frame 0 is returned untouched.
pub fn render_frames(first: &Frame, count: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<Frame> {
    let (w, h) = first.dimensions();
    let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let peak_at = rng.random_range(0.3..0.8) * count as f64;
    let width = (count as f64 / 6.0).max(1.0);
    let mut frames = Vec::with_capacity(count);
    frames.push(first.clone());
    let (mut px, mut py) = (0.0f64, 0.0f64);
    for t in 1..count {
        let z = (t as f64 - peak_at) / width;
        let speed = amplitude * (0.15 + (-0.5 * z * z).exp());
        px += speed * heading.cos();
        py += speed * heading.sin();
        let (dx, dy) = (px.round() as i64, py.round() as i64);
        let lift = ((t as f64 / count as f64) * 12.0).round() as i16;
        let mut frame = Frame::new(w, h);
        for (x, y, out) in frame.enumerate_pixels_mut() {
            let sx = (x as i64 - dx).rem_euclid(w as i64) as u32;
            let sy = (y as i64 - dy).rem_euclid(h as i64) as u32;
            let Rgb(p) = *first.get_pixel(sx, sy);
            *out = Rgb(p.map(|c| (c as i16 + lift).clamp(0, 255) as u8));
        }
        frames.push(frame);
    }
    frames
}

/// Keypoint tracks with per-track headings and a shared speed bump; about 5%
/// of points after frame 0 are reported invisible.
pub fn procedural_tracks(
    width: u32,
    height: u32,
    frame_count: usize,
    n: usize,
    still: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<WireTrack> {
    let peak_at = rng.random_range(0.25..0.75) * frame_count as f64;
    let spread = (frame_count as f64 / 8.0).max(1.0);
    let peak = rng.random_range(2.0..8.0);
    (0..n)
        .map(|id| {
            let mut x = rng.random_range(0.0..width.max(1) as f64);
            let mut y = rng.random_range(0.0..height.max(1) as f64);
            let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let points = (0..frame_count)
                .map(|t| {
                    if t > 0 && !still {
                        let z = (t as f64 - peak_at) / spread;
                        let speed = 0.3 + peak * (-0.5 * z * z).exp();
                        x += speed * heading.cos();
                        y += speed * heading.sin();
                    }
                    let visible = t == 0 || rng.random_range(0.0..1.0) >= 0.05;
                    WirePoint { x, y, visible }
                })
                .collect();
            WireTrack {
                id: id as u32,
                points,
            }
        })
        .collect()
}

pub fn procedural_aesthetic(rng: &mut ChaCha8Rng) -> f64 {
    let raw: f64 = rng.random_range(3.0..8.0);
    (raw * 1000.0).round() / 1000.0
}

pub fn procedural_triad(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [rng.random_range(0..=5), rng.random_range(0..=5), rng.random_range(0..=5)]
}

const WORDS: &[&str] = &[
    "quartz", "submarine", "neon", "glacier", "violin", "cactus", "lighthouse", "origami",
    "thunder", "marble", "volcano", "saxophone", "meteor", "harbor", "tundra", "carnival",
    "zeppelin", "orchid", "canyon", "typewriter", "aurora", "bazaar", "pendulum", "iceberg",
];

fn phrase(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A valid shot entry that shares nothing with a typical script.
pub fn adversarial_shot(index: usize, rng: &mut ChaCha8Rng) -> ShotEntry {
    let name = format!("Stranger{}", rng.random_range(100..1000));
    ShotEntry {
        index,
        characters: vec![CharacterSpec {
            name: name.clone(),
            entity_type: phrase(rng, 2),
            clothing: phrase(rng, 3),
            appearance: phrase(rng, 3),
            props: vec![phrase(rng, 2)],
        }],
        shot: ShotSpec {
            emotion: phrase(rng, 2),
            description: phrase(rng, 6),
            action: phrase(rng, 3),
        },
        scene: SceneSpec {
            environment: phrase(rng, 4),
            key_props: vec![phrase(rng, 2)],
            style: phrase(rng, 2),
        },
        composition: CompositionSpec {
            framing: phrase(rng, 3),
            camera_angle: phrase(rng, 3),
            layout: vec![LayoutSlot {
                character: name.clone(),
                anchor: Anchor::Above,
                scale: 0.3,
            }],
        },
        relationships: vec![RelationshipSpec {
            participants: vec![name],
            interaction_type: phrase(rng, 2),
            detail: phrase(rng, 5),
        }],
        linkage: Linkage::F,
    }
}

/// A plain sheet built from the director prompt's story text: one shot per
/// sentence (at most eight), every listed character in every shot.
pub fn story_sheet(user_prompt: &str) -> DopeSheet {
    let story = between(user_prompt, "Story:", "Character references:").unwrap_or(user_prompt);
    let listed = between(user_prompt, "Character references:", "Scene reference:").unwrap_or("");
    let mut names: Vec<String> = listed
        .split(',')
        .map(|n| n.split(" (").next().unwrap_or("").trim().to_string())
        .filter(|n| !n.is_empty() && n != "none")
        .collect();
    names.dedup();
    if names.is_empty() {
        names.push("character_1".to_string());
    }
    let mut sentences: Vec<&str> = story
        .split(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .take(8)
        .collect();
    if sentences.is_empty() {
        sentences.push("an uneventful moment");
    }
    let anchors: &[Anchor] = match names.len() {
        1 => &[Anchor::Center],
        2 => &[Anchor::Left, Anchor::Right],
        _ => &Anchor::ALL,
    };
    let shots = sentences
        .iter()
        .enumerate()
        .map(|(index, sentence)| ShotEntry {
            index,
            characters: names
                .iter()
                .map(|n| CharacterSpec {
                    name: n.clone(),
                    entity_type: "character".into(),
                    clothing: "as in the reference".into(),
                    appearance: "as in the reference".into(),
                    props: Vec::new(),
                })
                .collect(),
            shot: ShotSpec {
                emotion: "neutral".into(),
                description: sentence.to_string(),
                action: sentence.to_string(),
            },
            scene: SceneSpec {
                environment: "the story setting".into(),
                key_props: Vec::new(),
                style: "storyboard sketch".into(),
            },
            composition: CompositionSpec {
                framing: "medium shot".into(),
                camera_angle: "eye level".into(),
                layout: names
                    .iter()
                    .enumerate()
                    .map(|(i, n)| LayoutSlot {
                        character: n.clone(),
                        anchor: anchors[i % anchors.len()],
                        scale: 0.5,
                    })
                    .collect(),
            },
            relationships: vec![RelationshipSpec {
                participants: vec![names[0].clone(), ENVIRONMENT_PARTICIPANT.to_string()],
                interaction_type: "presence".into(),
                detail: sentence.to_string(),
            }],
            linkage: if index == 0 { Linkage::F } else { Linkage::T },
        })
        .collect();
    DopeSheet {
        story_id: "story".into(),
        style: "storyboard sketch".into(),
        shots,
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    Some(rest[..rest.find(end).unwrap_or(rest.len())].trim())
}

/// Appends a revision marker to the dimension's most descriptive text field,
/// leaving names and references alone so the result stays valid.
pub fn revise_dimension(value: &Value, dimension: DimensionKey, round_hint: u64) -> Value {
    let mut out = value.clone();
    let marker = format!(" (revised {round_hint})");
    let target: Option<&mut Value> = match dimension {
        DimensionKey::Characters => out.get_mut(0).and_then(|c| c.get_mut("appearance")),
        DimensionKey::Shots => out.get_mut("description"),
        DimensionKey::Scene => out.get_mut("environment"),
        DimensionKey::Composition => out.get_mut("framing"),
        DimensionKey::Relationships => out.get_mut(0).and_then(|r| r.get_mut("detail")),
    };
    if let Some(Value::String(s)) = target {
        s.push_str(&marker);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dopesheet::validate_shot;

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let a = hash_bag_embedding("scene: forest; lantern", 7, 64);
        assert_eq!(a, hash_bag_embedding("scene: forest; lantern", 7, 64));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(hash_bag_embedding(" ;; ", 7, 64).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rendered_frames_keep_frame_zero() {
        let mut first = Frame::new(16, 9);
        first.put_pixel(3, 3, Rgb([255, 0, 0]));
        let frames = render_frames(&first, 10, 3.0, &mut rng_for(1, "t", &[]));
        assert_eq!(frames.len(), 10);
        assert_eq!(frames[0], first);
        assert_ne!(frames[9], first);
    }

    #[test]
    fn adversarial_shots_validate() {
        let mut rng = rng_for(3, "adv", &[]);
        for i in 0..20 {
            assert!(validate_shot(&adversarial_shot(i + 1, &mut rng)).is_valid());
        }
    }

    #[test]
    fn story_sheets_validate() {
        let prompt = "Story:\nMia wakes. She walks to the lake!\n\nCharacter references: Mia (image 1), Leo (image 2)\nScene reference: none";
        let ds = story_sheet(prompt);
        assert!(crate::dopesheet::validate(&ds).is_valid());
        assert_eq!(ds.shots.len(), 2);
        assert_eq!(ds.shots[1].shot.description, "She walks to the lake");
        assert_eq!(ds.shots[0].composition.layout[1].anchor, Anchor::Right);
        assert!(crate::dopesheet::validate(&story_sheet("")).is_valid());
    }

    #[test]
    fn still_tracks_do_not_move() {
        let tracks = procedural_tracks(64, 36, 6, 3, true, &mut rng_for(0, "t", &[]));
        for t in tracks {
            assert!(t.points.windows(2).all(|w| w[0].x == w[1].x && w[0].y == w[1].y));
        }
    }
}
