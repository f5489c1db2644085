//! First-frame composition, I2V prompt construction and trajectory
//! acquisition.

use image::imageops::{self, FilterType};
use image::{Rgb, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, FrameOrigin, ModelClients, Trajectory, VideoParams};
use crate::director::CharacterRef;
use crate::dopesheet::{Anchor, DopeSheet, ShotEntry};
use crate::imaging::{content_hash, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    /// Fill used when there is no scene reference.
    pub background: [u8; 3],
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas {
            width: 640,
            height: 360,
            background: [128, 128, 128],
        }
    }
}

impl Anchor {
    /// Anchor position as fractions of canvas width and height.
    pub fn fraction(self) -> (f64, f64) {
        match self {
            Anchor::Left => (0.25, 0.5),
            Anchor::Right => (0.75, 0.5),
            Anchor::Center => (0.5, 0.5),
            Anchor::Above => (0.5, 0.25),
            Anchor::Below => (0.5, 0.75),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn inside(&self, width: u32, height: u32) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x + self.width <= width as f64 && self.y + self.height <= height as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub character: String,
    pub anchor: Anchor,
    pub scale: f64,
    pub bbox: BBox,
    /// Set when the box was shrunk about its center to stay on the canvas.
    pub fitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    SceneReference,
    FlatCanvas,
    PreviousExtreme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstFramePlan {
    pub width: u32,
    pub height: u32,
    pub base: Base,
    pub placements: Vec<Placement>,
    pub origin: FrameOrigin,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArtistError {
    #[error("shot {shot} links to the previous shot but no previous extreme is available")]
    MissingPreviousExtreme { shot: usize },
    #[error("shot {shot} lays out {name:?} but no reference image was given for it")]
    MissingCharacterRef { shot: usize, name: String },
    #[error("no scene reference to use as the provided first frame")]
    MissingSceneRef,
    #[error("canvas must be non-empty")]
    EmptyCanvas,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("job {job_id} frame 0 has hash {actual}, submitted {expected}")]
    AnchorMismatch {
        job_id: String,
        expected: String,
        actual: String,
    },
}

/// Box for a character reference of `ref_w`×`ref_h` pixels: height is
/// `scale`·H, aspect preserved, centred on the anchor.
pub fn place(anchor: Anchor, scale: f64, ref_w: u32, ref_h: u32, width: u32, height: u32) -> (BBox, bool) {
    let (fx, fy) = anchor.fraction();
    let (cx, cy) = (fx * width as f64, fy * height as f64);
    let aspect = ref_w.max(1) as f64 / ref_h.max(1) as f64;
    let mut h = scale * height as f64;
    let mut w = h * aspect;
    let max_w = 2.0 * cx.min(width as f64 - cx);
    let max_h = 2.0 * cy.min(height as f64 - cy);
    let shrink = (max_w / w).min(max_h / h).min(1.0);
    let fitted = shrink < 1.0;
    if fitted {
        w *= shrink;
        h *= shrink;
    }
    (
        BBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            width: w,
            height: h,
        },
        fitted,
    )
}

/// The visual dope sheet for a shot. Linked shots reuse the previous
/// extreme as is; others get the scene (or a flat canvas) with each laid-out
/// character pasted at its anchor.
pub fn compose_first_frame(
    shot: &ShotEntry,
    char_refs: &[CharacterRef],
    scene_ref: Option<&Frame>,
    prev_extreme: Option<&Frame>,
    canvas: &Canvas,
) -> Result<(Frame, FirstFramePlan), ArtistError> {
    if shot.linkage.is_linked() {
        let prev = prev_extreme.ok_or(ArtistError::MissingPreviousExtreme { shot: shot.index })?;
        let (width, height) = prev.dimensions();
        return Ok((
            prev.clone(),
            FirstFramePlan {
                width,
                height,
                base: Base::PreviousExtreme,
                placements: Vec::new(),
                origin: FrameOrigin::PreviousExtreme,
            },
        ));
    }
    composite(shot, char_refs, scene_ref, canvas)
}

/// Composites ignoring linkage; used when a linked shot has lost its
/// predecessor.
pub fn composite(
    shot: &ShotEntry,
    char_refs: &[CharacterRef],
    scene_ref: Option<&Frame>,
    canvas: &Canvas,
) -> Result<(Frame, FirstFramePlan), ArtistError> {
    let (width, height) = (canvas.width, canvas.height);
    if width == 0 || height == 0 {
        return Err(ArtistError::EmptyCanvas);
    }
    let refs: Vec<&RgbaImage> = shot
        .composition
        .layout
        .iter()
        .map(|slot| {
            char_refs
                .iter()
                .find(|c| c.name == slot.character)
                .map(|c| &c.image)
                .ok_or_else(|| ArtistError::MissingCharacterRef {
                    shot: shot.index,
                    name: slot.character.clone(),
                })
        })
        .collect::<Result<_, _>>()?;

    let (mut img, base) = match scene_ref {
        Some(scene) => {
            let rgba = image::DynamicImage::ImageRgb8(scene.clone()).to_rgba8();
            (imageops::resize(&rgba, width, height, FilterType::Triangle), Base::SceneReference)
        }
        None => {
            let [r, g, b] = canvas.background;
            (RgbaImage::from_pixel(width, height, Rgba([r, g, b, 255])), Base::FlatCanvas)
        }
    };

    let mut placements = Vec::with_capacity(refs.len());
    for (slot, reference) in shot.composition.layout.iter().zip(refs) {
        let (bbox, fitted) = place(slot.anchor, slot.scale, reference.width(), reference.height(), width, height);
        if fitted {
            log::warn!(
                "shot {}: {} at {} shrunk to fit the canvas",
                shot.index,
                slot.character,
                slot.anchor.as_str()
            );
        }
        let w = (bbox.width.round() as u32).max(1);
        let h = (bbox.height.round() as u32).max(1);
        let sprite = imageops::resize(reference, w, h, FilterType::Triangle);
        imageops::overlay(&mut img, &sprite, bbox.x.round() as i64, bbox.y.round() as i64);
        placements.push(Placement {
            character: slot.character.clone(),
            anchor: slot.anchor,
            scale: slot.scale,
            bbox,
            fitted,
        });
    }

    let frame = Frame::from_fn(width, height, |x, y| {
        let Rgba([r, g, b, _]) = *img.get_pixel(x, y);
        Rgb([r, g, b])
    });
    Ok((
        frame,
        FirstFramePlan {
            width,
            height,
            base,
            placements,
            origin: FrameOrigin::Composited,
        },
    ))
}

/// Uses the scene reference itself, resized to the canvas, as frame 0.
pub fn provided_first_frame(scene_ref: Option<&Frame>, canvas: &Canvas) -> Result<(Frame, FirstFramePlan), ArtistError> {
    let scene = scene_ref.ok_or(ArtistError::MissingSceneRef)?;
    if canvas.width == 0 || canvas.height == 0 {
        return Err(ArtistError::EmptyCanvas);
    }
    let frame = imageops::resize(scene, canvas.width, canvas.height, FilterType::Triangle);
    Ok((
        frame,
        FirstFramePlan {
            width: canvas.width,
            height: canvas.height,
            base: Base::SceneReference,
            placements: Vec::new(),
            origin: FrameOrigin::Provided,
        },
    ))
}

fn list(items: &[String]) -> String {
    items.join(", ")
}

/// I2V prompt for one shot: scene, characters, action, camera, relationships,
/// then the entities the first frame must keep.
///
/// # Panics
/// If `shot` is out of range.
pub fn compose_prompt(ds: &DopeSheet, shot: usize) -> String {
    let s = &ds.shots[shot];
    let mut clauses = Vec::new();

    let mut scene = format!("Scene: {}", s.scene.environment);
    if !s.scene.style.is_empty() {
        scene.push_str(&format!(", {} style", s.scene.style));
    }
    if !s.scene.key_props.is_empty() {
        scene.push_str(&format!(", with {}", list(&s.scene.key_props)));
    }
    clauses.push(scene + ".");

    if !s.characters.is_empty() {
        let people: Vec<String> = s
            .characters
            .iter()
            .map(|c| {
                let mut parts = vec![c.entity_type.clone(), c.appearance.clone()];
                if !c.clothing.is_empty() {
                    parts.push(format!("wearing {}", c.clothing));
                }
                if !c.props.is_empty() {
                    parts.push(format!("carrying {}", list(&c.props)));
                }
                parts.retain(|p| !p.is_empty());
                format!("{} ({})", c.name, parts.join("; "))
            })
            .collect();
        clauses.push(format!("Characters: {}.", people.join("; ")));
    }

    let mut action = format!("Action: {}", s.shot.description);
    if !s.shot.action.is_empty() {
        action.push_str(&format!("; {}", s.shot.action));
    }
    if !s.shot.emotion.is_empty() {
        action.push_str(&format!("; mood: {}", s.shot.emotion));
    }
    clauses.push(action + ".");

    let mut camera: Vec<String> = [&s.composition.framing, &s.composition.camera_angle]
        .into_iter()
        .filter(|t| !t.is_empty())
        .cloned()
        .collect();
    camera.extend(
        s.composition
            .layout
            .iter()
            .map(|l| format!("{} at {}", l.character, l.anchor.as_str())),
    );
    if !camera.is_empty() {
        clauses.push(format!("Camera: {}.", camera.join(", ")));
    }

    if !s.relationships.is_empty() {
        let rels: Vec<String> = s
            .relationships
            .iter()
            .map(|r| format!("{} ({}): {}", r.participants.join(" and "), r.interaction_type, r.detail))
            .collect();
        clauses.push(format!("Relationships: {}.", rels.join("; ")));
    }

    let mut anchors: Vec<&str> = s.characters.iter().map(|c| c.name.as_str()).collect();
    anchors.push(&s.scene.environment);
    clauses.push(format!("Keep as in the first frame: {}.", anchors.join(", ")));
    clauses.join(" ")
}

/// Submits a first frame for video generation.
pub fn submit_first_frame(
    first_frame: &Frame,
    prompt: &str,
    params: VideoParams,
    clients: &ModelClients,
) -> Result<String, ArtistError> {
    if params.frame_count < 5 {
        log::warn!(
            "{} frames requested; tail sampling will see fewer than five keyframes",
            params.frame_count
        );
    }
    Ok(clients.submit_video(first_frame, prompt, params)?)
}

/// Polls and downloads a submitted job, then checks that frame 0 is the
/// frame that was submitted.
pub fn collect_trajectory(
    first_frame: &Frame,
    job_id: &str,
    params: VideoParams,
    origin: FrameOrigin,
    clients: &ModelClients,
) -> Result<Trajectory, ArtistError> {
    let traj = clients.collect_video(job_id, params, origin)?;
    let expected = content_hash(first_frame);
    let actual = content_hash(&traj.frames[0]);
    if expected != actual {
        return Err(ArtistError::AnchorMismatch {
            job_id: job_id.to_string(),
            expected,
            actual,
        });
    }
    Ok(traj)
}

/// Submit (unless `existing_job` is given), hand the job id to `record`,
/// then collect. Resuming with the recorded id never resubmits.
pub fn acquire_trajectory(
    first_frame: &Frame,
    prompt: &str,
    params: VideoParams,
    origin: FrameOrigin,
    clients: &ModelClients,
    existing_job: Option<&str>,
    mut record: impl FnMut(&str),
) -> Result<Trajectory, ArtistError> {
    let job_id = match existing_job {
        Some(id) => id.to_string(),
        None => {
            let id = submit_first_frame(first_frame, prompt, params, clients)?;
            record(&id);
            id
        }
    };
    collect_trajectory(first_frame, &job_id, params, origin, clients)
}

#[cfg(test)]
mod tests;
