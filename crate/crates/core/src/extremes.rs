//! Stage two of review: pick the extreme frame of an accepted trajectory.
//!
//! Frames are ranked by an objective score that fuses per-frame aesthetics
//! with keypoint motion, and the top candidates are judged by a critic model
//! on three integer axes.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::wire::{ChatMessage, Role};
use crate::backend::{BackendError, ModelClients, TrackSetOf, Trajectory};
use crate::consistency::ReportWarning;
use crate::dopesheet::{flatten::shot_dimension_text, DimensionKey, DopeSheet};
use crate::imaging::{self, Frame};
use crate::prompts::{self, ask_structured, render, user_message, AskError};
use crate::Scalar;

pub const DEFAULT_TOP_K: usize = 5;
pub const TRIAD_MAX: u8 = 5;
/// The critic gets one repair prompt per candidate.
pub const CRITIC_REPAIRS: usize = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtremesError {
    #[error("aesthetic and motion lists differ in length ({aes} vs {mos})")]
    LengthMismatch { aes: usize, mos: usize },
    #[error("no frames to score")]
    Empty,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("malformed tracks: {0}")]
    Tracks(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionScores<T> {
    pub values: Vec<T>,
    /// Frames where no track was visible in both that frame and the previous.
    pub low_confidence: Vec<bool>,
}

/// Mean displacement of the keypoints visible in both frame `t-1` and `t`;
/// frame 0 scores zero.
pub fn motion_scores<T: Scalar>(tracks: &TrackSetOf<T>) -> MotionScores<T> {
    let n = tracks.frame_count;
    let mut values = vec![T::zero(); n];
    let mut low_confidence = vec![false; n];
    for t in 1..n {
        let (sum, count) = tracks
            .tracks
            .iter()
            .filter_map(|tr| {
                let (a, b) = (tr.points.get(t - 1)?, tr.points.get(t)?);
                (a.visible && b.visible).then(|| (b.x - a.x).hypot(b.y - a.y))
            })
            .fold((T::zero(), 0usize), |(s, c), d| (s + d, c + 1));
        if count == 0 {
            low_confidence[t] = true;
        } else {
            values[t] = sum / T::from_usize(count).expect("count fits");
        }
    }
    MotionScores { values, low_confidence }
}

/// Rescales to [0, 1]; a constant list maps to 0.5.
pub fn min_max_normalize<T: Scalar>(xs: &[T]) -> Vec<T> {
    let lo = xs.iter().copied().fold(T::infinity(), T::min);
    let hi = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    if span.is_nan() || span <= T::zero() {
        return vec![T::from_f64_lossy(0.5); xs.len()];
    }
    xs.iter().map(|&x| (x - lo) / span).collect()
}

/// Indices of the `k` largest scores, by score descending then index ascending.
pub fn top_k<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b)));
    order.truncate(k);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub index: usize,
    pub aes_raw: f64,
    pub mos_raw: f64,
    pub aes_norm: f64,
    pub mos_norm: f64,
    pub s_obj: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub frames: Vec<FrameScore>,
    pub candidates: Vec<usize>,
}

pub fn objective_scores(aes: &[f64], mos: &[f64], k: usize) -> Result<Objective, ExtremesError> {
    if aes.len() != mos.len() {
        return Err(ExtremesError::LengthMismatch { aes: aes.len(), mos: mos.len() });
    }
    if aes.is_empty() {
        return Err(ExtremesError::Empty);
    }
    let an = min_max_normalize(aes);
    let mn = min_max_normalize(mos);
    let frames: Vec<FrameScore> = (0..aes.len())
        .map(|i| FrameScore {
            index: i,
            aes_raw: aes[i],
            mos_raw: mos[i],
            aes_norm: an[i],
            mos_norm: mn[i],
            s_obj: (an[i] + mn[i]) / 2.0,
            low_confidence: false,
        })
        .collect();
    let s_obj: Vec<f64> = frames.iter().map(|f| f.s_obj).collect();
    Ok(Objective { candidates: top_k(&s_obj, k), frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triad {
    pub alignment: u8,
    pub expressiveness: u8,
    pub persuasiveness: u8,
}

impl Triad {
    pub fn s_subj(&self) -> f64 {
        (self.alignment as f64 + self.expressiveness as f64 + self.persuasiveness as f64) / 3.0
    }
}

const AXES: [&str; 3] = ["alignment", "expressiveness", "persuasiveness"];

/// Accepts `{"alignment": a, "expressiveness": e, "persuasiveness": p}` or a
/// bare list of three integers such as `4, 3, 5`.
pub fn parse_triad(reply: &str) -> Result<Triad, String> {
    let body = prompts::extract_json(reply).trim();
    let values: Vec<Value> = match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(obj)) => AXES
            .iter()
            .map(|axis| obj.get(*axis).cloned().ok_or(format!("missing axis \"{axis}\"")))
            .collect::<Result<_, _>>()?,
        Ok(Value::Array(items)) => items,
        _ => body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| serde_json::from_str(s).map_err(|_| format!("\"{s}\" is not a number")))
            .collect::<Result<_, _>>()?,
    };
    if values.len() != 3 {
        return Err(format!("expected three scores, got {}", values.len()));
    }
    let mut out = [0u8; 3];
    for (slot, (axis, v)) in out.iter_mut().zip(AXES.iter().zip(&values)) {
        let n = v
            .as_i64()
            .ok_or(format!("{axis} must be an integer, got {v}"))?;
        if !(0..=TRIAD_MAX as i64).contains(&n) {
            return Err(format!("{axis} = {n} is outside 0..={TRIAD_MAX}"));
        }
        *slot = n as u8;
    }
    Ok(Triad {
        alignment: out[0],
        expressiveness: out[1],
        persuasiveness: out[2],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triad: Option<Triad>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_subj: Option<f64>,
    #[serde(default)]
    pub repairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Shot script as shown to the critic.
pub fn shot_context(ds: &DopeSheet, shot: usize) -> String {
    let entry = &ds.shots[shot];
    let mut out = format!("Shot {} of {}", shot, ds.shots.len());
    for d in DimensionKey::ALL {
        out.push('\n');
        out.push_str(&shot_dimension_text(entry, d));
    }
    out
}

pub fn critic_messages(context: &str, shot: usize, index: usize, frame: &Frame) -> Vec<ChatMessage> {
    let (shot_s, frame_s) = (shot.to_string(), index.to_string());
    vec![
        ChatMessage::text(
            Role::System,
            render(prompts::REVIEWER_CRITIC, &[("SHOT", &shot_s), ("FRAME", &frame_s)]),
        ),
        user_message(
            render(prompts::REVIEWER_CRITIC_USER, &[("CONTEXT", context)]),
            vec![(format!("Candidate frame {index}"), imaging::to_base64_png(frame))],
        ),
    ]
}

/// One critic conversation per candidate. Candidates the critic cannot score
/// come back with an error and no triad.
pub fn subjective_scores(
    candidates: &[(usize, &Frame)],
    ds: &DopeSheet,
    shot: usize,
    clients: &ModelClients,
) -> Vec<Verdict> {
    let context = shot_context(ds, shot);
    candidates
        .iter()
        .map(|&(index, frame)| {
            match ask_structured(clients, critic_messages(&context, shot, index, frame), None, CRITIC_REPAIRS, parse_triad) {
                Ok(answer) => {
                    if answer.repairs > 0 {
                        log::info!("shot {shot} frame {index}: critic reply repaired");
                    }
                    Verdict {
                        index,
                        s_subj: Some(answer.value.s_subj()),
                        triad: Some(answer.value),
                        repairs: answer.repairs,
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("shot {shot} frame {index}: candidate dropped: {e}");
                    let repairs = match e {
                        AskError::Unparseable { attempts, .. } => attempts - 1,
                        AskError::Backend(_) => 0,
                    };
                    Verdict { index, triad: None, s_subj: None, repairs, error: Some(e.to_string()) }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    None,
    ObjectiveScore,
    FrameIndex,
    /// No candidate was scored by the critic; the best objective frame wins.
    Fallback,
}

/// Highest `s_subj` among scored candidates, then highest `s_obj`, then lowest
/// index. Without any scored candidate, the highest `s_obj` candidate.
pub fn select_extreme(
    candidates: &[usize],
    s_subj: &BTreeMap<usize, f64>,
    s_obj: &[f64],
) -> Result<(usize, TieBreak), ExtremesError> {
    if candidates.is_empty() {
        return Err(ExtremesError::NoCandidates);
    }
    let scored: Vec<usize> = candidates.iter().copied().filter(|i| s_subj.contains_key(i)).collect();
    if scored.is_empty() {
        let best = *candidates
            .iter()
            .max_by(|&&a, &&b| s_obj[a].partial_cmp(&s_obj[b]).expect("finite").then(b.cmp(&a)))
            .expect("non-empty");
        return Ok((best, TieBreak::Fallback));
    }
    let top = scored.iter().map(|i| s_subj[i]).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = scored.into_iter().filter(|i| s_subj[i] == top).collect();
    if tied.len() == 1 {
        return Ok((tied[0], TieBreak::None));
    }
    let best_obj = tied.iter().map(|&i| s_obj[i]).fold(f64::NEG_INFINITY, f64::max);
    let still: Vec<usize> = tied.into_iter().filter(|&i| s_obj[i] == best_obj).collect();
    if still.len() == 1 {
        return Ok((still[0], TieBreak::ObjectiveScore));
    }
    Ok((*still.iter().min().expect("non-empty"), TieBreak::FrameIndex))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub frames: Vec<FrameScore>,
    pub candidates: Vec<usize>,
    pub verdicts: Vec<Verdict>,
    pub selected: usize,
    pub tie_break: TieBreak,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_correspondence: bool,
    /// Carried over from a stage-one review that ran out of rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_warning: Option<ReportWarning>,
}

impl ScoreCard {
    pub fn selected_score(&self) -> &FrameScore {
        &self.frames[self.selected]
    }

    pub fn verdict(&self, index: usize) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.index == index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub top_k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { top_k: DEFAULT_TOP_K }
    }
}

/// Tracks motion against `reference`, scores aesthetics, shortlists and
/// critiques candidates, and selects the extreme.
pub fn mixed_review(
    traj: &Trajectory,
    reference: &Frame,
    ds: &DopeSheet,
    shot: usize,
    cfg: &SelectionConfig,
    clients: &ModelClients,
) -> Result<ScoreCard, ExtremesError> {
    if traj.is_empty() {
        return Err(ExtremesError::Empty);
    }
    let (motion, no_correspondence) = if traj.len() < 2 {
        (MotionScores { values: vec![0.0], low_confidence: vec![false] }, false)
    } else {
        let tracks = clients.track_keypoints(reference, traj)?;
        tracks.check().map_err(ExtremesError::Tracks)?;
        (motion_scores(&tracks), tracks.no_correspondence)
    };
    let aes = traj
        .frames
        .iter()
        .map(|f| clients.aesthetic_score(f))
        .collect::<Result<Vec<_>, _>>()?;
    let mut objective = objective_scores(&aes, &motion.values, cfg.top_k.max(1))?;
    for (f, &low) in objective.frames.iter_mut().zip(&motion.low_confidence) {
        f.low_confidence = low;
    }
    let shortlist: Vec<(usize, &Frame)> = objective.candidates.iter().map(|&i| (i, &traj.frames[i])).collect();
    let verdicts = subjective_scores(&shortlist, ds, shot, clients);
    let s_subj: BTreeMap<usize, f64> = verdicts.iter().filter_map(|v| Some((v.index, v.s_subj?))).collect();
    let s_obj: Vec<f64> = objective.frames.iter().map(|f| f.s_obj).collect();
    let (selected, tie_break) = select_extreme(&objective.candidates, &s_subj, &s_obj)?;
    if tie_break == TieBreak::Fallback {
        log::warn!("shot {shot}: no candidate survived the critic; selecting frame {selected} by objective score");
    }
    Ok(ScoreCard {
        frames: objective.frames,
        candidates: objective.candidates,
        verdicts,
        selected,
        tie_break,
        no_correspondence,
        consistency_warning: None,
    })
}

/// Per-frame scores of several shots as CSV, one row per frame.
pub fn write_scores_csv<W: Write>(cards: &[(usize, &ScoreCard)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "shot", "frame", "aes_raw", "mos_raw", "aes_norm", "mos_norm", "s_obj", "candidate", "s_subj", "selected",
    ])?;
    for (shot, card) in cards {
        for f in &card.frames {
            let s_subj = card.verdict(f.index).and_then(|v| v.s_subj).map(|s| format!("{s:.6}"));
            w.write_record([
                shot.to_string(),
                f.index.to_string(),
                format!("{:.6}", f.aes_raw),
                format!("{:.6}", f.mos_raw),
                format!("{:.6}", f.aes_norm),
                format!("{:.6}", f.mos_norm),
                format!("{:.6}", f.s_obj),
                (card.candidates.contains(&f.index) as u8).to_string(),
                s_subj.unwrap_or_default(),
                ((card.selected == f.index) as u8).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
