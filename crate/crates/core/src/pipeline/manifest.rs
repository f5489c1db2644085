//! Persisted job state. One manifest per story, rewritten after every step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artist::{Canvas, FirstFramePlan};
use crate::backend::FrameOrigin;
use crate::consistency::{ConsistencyReport, GateConfig};
use crate::dopesheet::{self, DimensionKey, DopeSheet, Patch, ShotEntry};
use crate::extremes::{ScoreCard, SelectionConfig};
use crate::imaging::sha256_hex;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Directing,
    Generating,
    ConsistencyReview,
    Refining,
    MixedReview,
    Selected,
    Failed,
}

impl Stage {
    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Selected | Stage::Failed)
    }

    /// Whether `self -> next` is an allowed transition.
    pub fn may_precede(self, next: Stage) -> bool {
        use Stage::*;
        match (self, next) {
            (Selected | Failed, _) => false,
            (_, Failed) => true,
            (Directing, Generating)
            | (Generating, ConsistencyReview)
            | (ConsistencyReview, Refining | MixedReview)
            | (Refining, Generating)
            | (MixedReview, Selected) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Completed,
    /// Finished under the skip policy with at least one failed shot.
    Partial,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltPolicy {
    #[default]
    Halt,
    Skip,
}

impl FromStr for HaltPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "halt" => Ok(HaltPolicy::Halt),
            "skip" => Ok(HaltPolicy::Skip),
            _ => Err(format!("unknown halt policy {s:?} (expected halt or skip)")),
        }
    }
}

impl fmt::Display for HaltPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HaltPolicy::Halt => "halt",
            HaltPolicy::Skip => "skip",
        })
    }
}

/// How unlinked shots get their first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstFrameMode {
    #[default]
    Composited,
    /// The scene reference, scaled to the canvas.
    Provided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSettings {
    pub frame_count: u32,
    pub fps: u32,
}

impl Default for VideoSettings {
    fn default() -> Self {
        VideoSettings { frame_count: 81, fps: 16 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub video: VideoSettings,
    pub gate: GateConfig,
    pub selection: SelectionConfig,
    pub canvas: Canvas,
    pub halt_policy: HaltPolicy,
    pub first_frame: FirstFrameMode,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.video.frame_count < 2 {
            return Err(format!("frame count must be >= 2, got {}", self.video.frame_count));
        }
        if self.video.fps == 0 {
            return Err("fps must be > 0".into());
        }
        let g = &self.gate;
        if !(g.threshold.is_finite() && (-1.0..=1.0).contains(&g.threshold)) {
            return Err(format!("threshold must lie in [-1, 1], got {}", g.threshold));
        }
        if g.keyframes == 0 {
            return Err("keyframe count must be >= 1".into());
        }
        if !(g.tail_fraction > 0.0 && g.tail_fraction <= 1.0) {
            return Err(format!("tail fraction must lie in (0, 1], got {}", g.tail_fraction));
        }
        if self.selection.top_k == 0 {
            return Err("top-k must be >= 1".into());
        }
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return Err("canvas must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefRecord {
    pub name: String,
    /// Store key of the reference PNG.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub story_text: String,
    pub character_refs: Vec<RefRecord>,
    pub scene_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub shot: usize,
    pub round: usize,
    pub dimensions: Vec<DimensionKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetVersion {
    pub version: usize,
    /// SHA-256 of the serialized sheet.
    pub hash: String,
    /// Absent for the director's original.
    pub cause: Option<Revision>,
    pub sheet: DopeSheet,
}

impl SheetVersion {
    pub fn new(version: usize, sheet: DopeSheet, cause: Option<Revision>) -> Self {
        SheetVersion {
            version,
            hash: sha256_hex(dopesheet::serialize(&sheet).as_bytes()),
            cause,
            sheet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstFrameRecord {
    pub hash: String,
    pub origin: FrameOrigin,
    pub plan: Option<FirstFramePlan>,
}

/// One generation of a shot: prompt, job, frames and what the reviewer made
/// of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub round: usize,
    pub sheet_version: usize,
    pub prompt: String,
    pub seed: u64,
    pub job_id: Option<String>,
    /// Store keys, in playback order.
    pub frames: Vec<String>,
    pub keyframes: Vec<usize>,
    pub caption: Option<ShotEntry>,
    pub caption_repairs: usize,
    pub report: Option<ConsistencyReport>,
    pub patches: Vec<Patch>,
}

impl Attempt {
    pub fn new(round: usize, sheet_version: usize, prompt: String, seed: u64) -> Self {
        Attempt {
            round,
            sheet_version,
            prompt,
            seed,
            job_id: None,
            frames: Vec::new(),
            keyframes: Vec::new(),
            caption: None,
            caption_repairs: 0,
            report: None,
            patches: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedFrame {
    pub frame: usize,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub index: usize,
    pub stage: Stage,
    pub history: Vec<Stage>,
    pub first_frame: Option<FirstFrameRecord>,
    pub attempts: Vec<Attempt>,
    pub scorecard: Option<ScoreCard>,
    pub selected: Option<SelectedFrame>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    /// Stage that was running when the shot failed.
    pub failed_at: Option<Stage>,
}

impl ShotRecord {
    pub fn new(index: usize) -> Self {
        ShotRecord {
            index,
            stage: Stage::Directing,
            history: vec![Stage::Directing],
            first_frame: None,
            attempts: Vec::new(),
            scorecard: None,
            selected: None,
            warnings: Vec::new(),
            error: None,
            failed_at: None,
        }
    }

    /// # Panics
    /// On a transition the stage order does not allow.
    pub fn enter(&mut self, next: Stage) {
        assert!(self.stage.may_precede(next), "shot {}: {:?} -> {next:?}", self.index, self.stage);
        if next == Stage::Failed {
            self.failed_at = Some(self.stage);
        }
        self.stage = next;
        self.history.push(next);
    }

    pub fn attempt(&self) -> Option<&Attempt> {
        self.attempts.last()
    }

    pub fn i2v_submissions(&self) -> usize {
        self.attempts.iter().filter(|a| a.job_id.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub schema_version: u32,
    pub story_id: String,
    pub status: JobStatus,
    pub created_at: u64,
    pub updated_at: u64,
    pub config: RunConfig,
    pub input: InputRecord,
    pub director_repairs: usize,
    pub sheets: Vec<SheetVersion>,
    pub shots: Vec<ShotRecord>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    /// SHA-256 of the manifest serialized with this field empty.
    pub checksum: String,
}

impl JobManifest {
    pub fn sheet(&self) -> Option<&DopeSheet> {
        self.sheets.last().map(|v| &v.sheet)
    }

    /// Canonical bytes: pretty JSON with a trailing newline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    pub fn compute_checksum(&self) -> String {
        let mut copy = self.clone();
        copy.checksum.clear();
        sha256_hex(&copy.to_bytes())
    }

    pub fn seal(&mut self) {
        self.checksum = self.compute_checksum();
    }

    /// Bytes with timestamps and checksum blanked, for comparing runs.
    pub fn without_timestamps(&self) -> Vec<u8> {
        let mut copy = self.clone();
        copy.created_at = 0;
        copy.updated_at = 0;
        copy.checksum.clear();
        copy.to_bytes()
    }

    /// Stage and score overview used by `inspect`.
    pub fn summary(&self) -> serde_json::Value {
        let shots: Vec<_> = self
            .shots
            .iter()
            .map(|s| {
                let card = s.scorecard.as_ref();
                serde_json::json!({
                    "index": s.index,
                    "stage": s.stage,
                    "rounds": s.attempts.len().saturating_sub(1),
                    "i2v_submissions": s.i2v_submissions(),
                    "failing": s.attempt().and_then(|a| a.report.as_ref()).map(|r| &r.failing),
                    "selected_frame": s.selected.as_ref().map(|x| x.frame),
                    "selected_hash": s.selected.as_ref().map(|x| &x.hash),
                    "s_obj": card.map(|c| c.selected_score().s_obj),
                    "s_subj": card.and_then(|c| c.verdict(c.selected)).and_then(|v| v.s_subj),
                    "tie_break": card.map(|c| c.tie_break),
                    "warnings": &s.warnings,
                    "error": &s.error,
                })
            })
            .collect();
        serde_json::json!({
            "story_id": self.story_id,
            "status": self.status,
            "sheet_versions": self.sheets.len(),
            "shots": shots,
            "warnings": self.warnings,
            "error": self.error,
        })
    }
}
