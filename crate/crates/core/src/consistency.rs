//! Stage one of review: caption the end of a trajectory back into a shot
//! entry, compare it with the script dimension by dimension, and refine the
//! dimensions that drifted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::wire::{ChatMessage, Role};
use crate::backend::{BackendError, ModelClients, Trajectory};
use crate::director::{self, DirectorError, Evidence};
use crate::dopesheet::{
    apply_patch, flatten::shot_dimension_text, validate_shot, DimensionKey, DopeSheet, Linkage, Patch,
    PatchError, ShotEntry,
};
use crate::imaging::{self, Frame};
use crate::prompts::{self, ask_structured, render, user_message, AskError, MAX_REPAIRS};
use crate::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MAX_ROUNDS: usize = 2;
pub const DEFAULT_KEYFRAMES: usize = 5;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub threshold: f64,
    pub max_rounds: usize,
    pub keyframes: usize,
    pub tail_fraction: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            threshold: DEFAULT_THRESHOLD,
            max_rounds: DEFAULT_MAX_ROUNDS,
            keyframes: DEFAULT_KEYFRAMES,
            tail_fraction: DEFAULT_TAIL_FRACTION,
        }
    }
}

/// `k` indices spread evenly over the last `ceil(tail_fraction * len)`
/// frames, always ending on the last frame. Short windows yield every index
/// in the window.
pub fn sample_tail_keyframes(len: usize, k: usize, tail_fraction: f64) -> Vec<usize> {
    if len == 0 || k == 0 {
        return Vec::new();
    }
    let window = ((tail_fraction * len as f64).ceil() as usize).clamp(1, len);
    let start = len - window;
    if window <= k {
        return (start..len).collect();
    }
    if k == 1 {
        return vec![len - 1];
    }
    let step = (window - 1) as f64 / (k - 1) as f64;
    let mut out: Vec<usize> = (0..k).map(|i| start + (i as f64 * step).round() as usize).collect();
    out.dedup();
    out
}

/// Cosine similarity clamped to [-1, 1]; `None` when either vector is zero.
///
/// # Panics
/// If the slices differ in length.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    assert_eq!(a.len(), b.len(), "cosine of vectors with different lengths");
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return None;
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    Some(c.max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    /// Absent when the caption could not be obtained.
    pub cs: Option<f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_embedding: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportWarning {
    MaxRoundsExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub round: usize,
    pub threshold: f64,
    pub dimensions: BTreeMap<DimensionKey, DimensionScore>,
    pub failing: Vec<DimensionKey>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<ReportWarning>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_error: Option<String>,
}

impl ConsistencyReport {
    /// Gates `scores` at `threshold`. A missing score fails.
    pub fn gate(
        round: usize,
        threshold: f64,
        scores: &BTreeMap<DimensionKey, (Option<f64>, bool)>,
        is_last_round: bool,
    ) -> Self {
        let dimensions: BTreeMap<_, _> = DimensionKey::ALL
            .into_iter()
            .map(|d| {
                let (cs, zero) = scores.get(&d).copied().unwrap_or((None, false));
                let pass = cs.is_some_and(|v| v >= threshold);
                (
                    d,
                    DimensionScore {
                        cs,
                        pass,
                        zero_embedding: zero,
                    },
                )
            })
            .collect();
        let failing: Vec<_> = dimensions.iter().filter(|(_, s)| !s.pass).map(|(d, _)| *d).collect();
        let warning = (!failing.is_empty() && is_last_round).then_some(ReportWarning::MaxRoundsExhausted);
        ConsistencyReport {
            round,
            threshold,
            accepted: failing.is_empty() || warning.is_some(),
            dimensions,
            failing,
            warning,
            caption_error: None,
        }
    }

    pub fn score(&self, d: DimensionKey) -> Option<f64> {
        self.dimensions.get(&d).and_then(|s| s.cs)
    }
}

/// Dimensions whose score falls below `threshold`.
pub fn failing_dimensions(scores: &BTreeMap<DimensionKey, f64>, threshold: f64) -> Vec<DimensionKey> {
    scores.iter().filter(|(_, &v)| v < threshold).map(|(d, _)| *d).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReviewError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ask(#[from] AskError),
    #[error(transparent)]
    Director(#[from] DirectorError),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

pub fn caption_messages(frames: &[(usize, &Frame)], shot: usize) -> Vec<ChatMessage> {
    let shot_s = shot.to_string();
    let images = frames
        .iter()
        .map(|(i, f)| (format!("Keyframe {i}"), imaging::to_base64_png(f)))
        .collect();
    vec![
        ChatMessage::text(
            Role::System,
            render(prompts::REVIEWER_CAPTION, &[("SHOT", &shot_s), ("SCHEMA", prompts::DOPESHEET_SCHEMA)]),
        ),
        user_message(
            format!("{} keyframes from the end of shot {shot}, in playback order.", frames.len()),
            images,
        ),
    ]
}

/// Parses a caption reply into a shot entry. The index and linkage the model
/// reports are ignored.
pub fn parse_caption_reply(reply: &str, shot: usize) -> Result<ShotEntry, String> {
    let mut value: Value = serde_json::from_str(prompts::extract_json(reply))
        .map_err(|e| format!("reply is not a JSON object: {e}"))?;
    if let Some(obj) = value.get_mut("shots").and_then(|s| s.get_mut(0)).cloned() {
        value = obj;
    }
    let Some(obj) = value.as_object_mut() else {
        return Err("reply must be a single shot-entry object".into());
    };
    obj.insert("index".into(), Value::from(shot));
    obj.insert("linkage".into(), Value::String(Linkage::F.as_str().into()));
    let entry: ShotEntry = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        format!("at {path}: {}", e.into_inner())
    })?;
    let report = validate_shot(&entry);
    if !report.is_valid() {
        return Err(format!("the shot entry has violations:\n{report}"));
    }
    Ok(entry)
}

/// Captions `frames` as one shot entry, repairing invalid replies up to twice.
pub fn caption_to_dopesheet(
    frames: &[(usize, &Frame)],
    shot: usize,
    clients: &ModelClients,
) -> Result<prompts::Answer<ShotEntry>, ReviewError> {
    if frames.is_empty() {
        return Err(ReviewError::Precondition("captioning needs at least one frame".into()));
    }
    let schema: Value = serde_json::from_str(prompts::DOPESHEET_SCHEMA).expect("bundled schema is JSON");
    Ok(ask_structured(clients, caption_messages(frames, shot), Some(&schema), MAX_REPAIRS, |r| {
        parse_caption_reply(r, shot)
    })?)
}

/// Cosine between the embeddings of each dimension's flattened text in the
/// script and in the caption. A zero embedding scores 0 and is flagged.
pub fn consistency_scores(
    original: &ShotEntry,
    caption: &ShotEntry,
    clients: &ModelClients,
) -> Result<BTreeMap<DimensionKey, (f64, bool)>, ReviewError> {
    let mut texts: Vec<String> = DimensionKey::ALL.iter().map(|&d| shot_dimension_text(caption, d)).collect();
    texts.extend(DimensionKey::ALL.iter().map(|&d| shot_dimension_text(original, d)));
    let vectors = clients.embed(&texts)?;
    let (cap, ori) = vectors.split_at(DimensionKey::ALL.len());
    Ok(DimensionKey::ALL
        .into_iter()
        .enumerate()
        .map(|(i, d)| match cosine(&cap[i].values, &ori[i].values) {
            Some(cs) => (d, (cs, false)),
            None => {
                log::warn!("zero embedding for {d}; scoring it 0");
                (d, (0.0, true))
            }
        })
        .collect())
}

/// Result of reviewing one trajectory against the current sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReview {
    pub keyframes: Vec<usize>,
    pub caption: Option<ShotEntry>,
    pub caption_repairs: usize,
    pub report: ConsistencyReport,
}

/// Samples the tail, captions it and gates the scores. An unparseable
/// caption fails every dimension instead of erroring.
pub fn review_round(
    traj: &Trajectory,
    ds: &DopeSheet,
    shot: usize,
    round: usize,
    cfg: &GateConfig,
    clients: &ModelClients,
) -> Result<RoundReview, ReviewError> {
    let original = ds
        .shots
        .get(shot)
        .ok_or_else(|| ReviewError::Precondition(format!("shot {shot} is out of range")))?;
    let keyframes = sample_tail_keyframes(traj.len(), cfg.keyframes, cfg.tail_fraction);
    let frames: Vec<(usize, &Frame)> = keyframes.iter().map(|&i| (i, &traj.frames[i])).collect();
    let last = round >= cfg.max_rounds;
    match caption_to_dopesheet(&frames, shot, clients) {
        Ok(answer) => {
            let scores = consistency_scores(original, &answer.value, clients)?;
            let gated = scores.into_iter().map(|(d, (cs, zero))| (d, (Some(cs), zero))).collect();
            Ok(RoundReview {
                keyframes,
                caption: Some(answer.value),
                caption_repairs: answer.repairs,
                report: ConsistencyReport::gate(round, cfg.threshold, &gated, last),
            })
        }
        Err(ReviewError::Ask(AskError::Unparseable { attempts, diagnostics })) => {
            log::warn!("shot {shot} round {round}: caption unusable after {attempts} attempts");
            let mut report = ConsistencyReport::gate(round, cfg.threshold, &BTreeMap::new(), last);
            report.caption_error = Some(diagnostics);
            Ok(RoundReview {
                keyframes,
                caption: None,
                caption_repairs: attempts.saturating_sub(1),
                report,
            })
        }
        Err(e) => Err(e),
    }
}

/// One patch per failing dimension, applied in dimension order.
pub fn refine_failing(
    ds: &DopeSheet,
    shot: usize,
    review: &RoundReview,
    cfg: &GateConfig,
    clients: &ModelClients,
) -> Result<(Vec<Patch>, DopeSheet), ReviewError> {
    let mut sheet = ds.clone();
    let mut patches = Vec::with_capacity(review.report.failing.len());
    for &d in &review.report.failing {
        let caption_text = review.caption.as_ref().map(|c| shot_dimension_text(c, d));
        let evidence = Evidence {
            caption_entry: caption_text.as_deref(),
            score: review.report.score(d),
        };
        let refined = director::refine_dimension(ds, shot, d, evidence, cfg.threshold, clients)?;
        sheet = apply_patch(&sheet, &refined.patch)?;
        patches.push(refined.patch);
    }
    Ok((patches, sheet))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub trajectory: Trajectory,
    pub sheet: DopeSheet,
    pub reports: Vec<ConsistencyReport>,
    /// Patches applied after each refinement round.
    pub patches: Vec<Vec<Patch>>,
    pub i2v_calls: usize,
}

/// In-memory refinement loop: review, and while dimensions fail and rounds
/// remain, patch them and regenerate with `acquire`. The pipeline runs the
/// same steps with persistence between them.
pub fn run_refinement_loop<E: From<ReviewError>>(
    ds: &DopeSheet,
    shot: usize,
    initial: Trajectory,
    cfg: &GateConfig,
    clients: &ModelClients,
    mut acquire: impl FnMut(&DopeSheet) -> Result<Trajectory, E>,
) -> Result<LoopOutcome, E> {
    let mut sheet = ds.clone();
    let mut traj = initial;
    let mut reports = Vec::new();
    let mut all_patches = Vec::new();
    let mut i2v_calls = 1;
    for round in 0..=cfg.max_rounds {
        let review = review_round(&traj, &sheet, shot, round, cfg, clients)?;
        let accepted = review.report.accepted;
        reports.push(review.report.clone());
        if accepted {
            break;
        }
        let (patches, next) = refine_failing(&sheet, shot, &review, cfg, clients)?;
        all_patches.push(patches);
        sheet = next;
        traj = acquire(&sheet)?;
        i2v_calls += 1;
    }
    Ok(LoopOutcome {
        trajectory: traj,
        sheet,
        reports,
        patches: all_patches,
        i2v_calls,
    })
}

#[cfg(test)]
mod tests;
