//! Per-shot state machine: first frame, generation, consistency review and
//! refinement, mixed review, selection. Every step ends with the manifest
//! written to disk, so a run can stop anywhere and be resumed.

pub mod manifest;
pub mod store;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::artist::{self, ArtistError};
use crate::backend::{FrameOrigin, ModelClients, Trajectory, VideoParams};
use crate::consistency::{self, ReviewError, RoundReview};
use crate::director::{self, CharacterRef, DirectorError, StoryInput};
use crate::dopesheet::{DopeSheet, Linkage};
use crate::extremes::{self, ExtremesError, ScoreCard};
use crate::imaging::Frame;

pub use manifest::{
    Attempt, FirstFrameMode, FirstFrameRecord, HaltPolicy, InputRecord, JobManifest, JobStatus, RefRecord,
    Revision, RunConfig, SelectedFrame, SheetVersion, ShotRecord, Stage, VideoSettings, SCHEMA_VERSION,
};
pub use store::{FrameStore, StoreError};

pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch.
    fn now(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Input(DirectorError),
    #[error("job {0} already exists; resume it instead")]
    AlreadyExists(String),
    #[error("no job named {0}")]
    NotFound(String),
    #[error("manifest {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("manifest schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("directing failed: {0}")]
    Director(DirectorError),
    /// Injected stop after the given number of manifest writes.
    #[error("stopped after {0} manifest writes")]
    Crashed(usize),
}

/// A failure that ends the current shot.
#[derive(Debug, thiserror::Error)]
enum ShotError {
    #[error(transparent)]
    Artist(#[from] ArtistError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Extremes(#[from] ExtremesError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Other(String),
}

/// Errors that stop the run rather than the shot.
enum StepError {
    Shot(ShotError),
    Fatal(PipelineError),
}

impl From<PipelineError> for StepError {
    fn from(e: PipelineError) -> Self {
        StepError::Fatal(e)
    }
}

macro_rules! shot_error {
    ($($t:ty),*) => {$(
        impl From<$t> for StepError {
            fn from(e: $t) -> Self {
                StepError::Shot(e.into())
            }
        }
    )*};
}

shot_error!(ArtistError, ReviewError, ExtremesError, StoreError, ShotError);

#[derive(Debug, Clone, PartialEq)]
pub struct ShotOutcome {
    pub index: usize,
    pub frame_index: usize,
    pub hash: String,
    pub frame: Frame,
    pub s_obj: f64,
    pub s_subj: Option<f64>,
    pub sheet_version: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoryboardResult {
    pub story_id: String,
    pub status: JobStatus,
    /// Selected extremes in shot order.
    pub shots: Vec<ShotOutcome>,
    pub failed: Vec<usize>,
    pub manifest_path: PathBuf,
}

/// Runs and resumes jobs under one working directory.
pub struct Engine {
    clients: ModelClients,
    workdir: PathBuf,
    clock: Arc<dyn Clock>,
    crash_after: Option<usize>,
}

struct Persister<'a> {
    path: PathBuf,
    clock: &'a dyn Clock,
    writes: usize,
    crash_after: Option<usize>,
}

impl Persister<'_> {
    fn save(&mut self, m: &mut JobManifest) -> Result<(), PipelineError> {
        m.updated_at = self.clock.now();
        m.seal();
        store::write_atomic(&self.path, &m.to_bytes())?;
        self.writes += 1;
        if self.crash_after == Some(self.writes) {
            return Err(PipelineError::Crashed(self.writes));
        }
        Ok(())
    }
}

/// Seed of one generation attempt, derived from the run seed.
pub fn attempt_seed(seed: u64, shot: usize, round: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((shot as u64).to_le_bytes());
    h.update((round as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

impl Engine {
    pub fn new(clients: ModelClients, workdir: impl Into<PathBuf>) -> Self {
        Engine {
            clients,
            workdir: workdir.into(),
            clock: Arc::new(SystemClock),
            crash_after: None,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Makes runs stop with [`PipelineError::Crashed`] right after the
    /// `n`-th manifest write.
    pub fn with_crash_after(mut self, n: Option<usize>) -> Self {
        self.crash_after = n;
        self
    }

    pub fn clients(&self) -> &ModelClients {
        &self.clients
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn store(&self) -> FrameStore {
        FrameStore::new(self.workdir.join("store"))
    }

    pub fn manifest_path(&self, story_id: &str) -> PathBuf {
        self.workdir.join("jobs").join(story_id).join("manifest.json")
    }

    /// Reads and verifies a manifest.
    pub fn load_manifest(&self, story_id: &str) -> Result<JobManifest, PipelineError> {
        load_manifest(&self.manifest_path(story_id))
    }

    fn persister(&self, story_id: &str) -> Persister<'_> {
        Persister {
            path: self.manifest_path(story_id),
            clock: self.clock.as_ref(),
            writes: 0,
            crash_after: self.crash_after,
        }
    }

    pub fn run_story(&self, input: &StoryInput, config: &RunConfig) -> Result<StoryboardResult, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        input.check().map_err(PipelineError::Input)?;
        let path = self.manifest_path(&input.story_id);
        if path.exists() {
            return Err(PipelineError::AlreadyExists(input.story_id.clone()));
        }
        let store = self.store();
        let character_refs = input
            .character_refs
            .iter()
            .map(|c| Ok(RefRecord { name: c.name.clone(), hash: store.put_rgba(&c.image)? }))
            .collect::<Result<Vec<_>, StoreError>>()?;
        let scene_ref = input.scene_ref.as_ref().map(|f| store.put(f)).transpose()?;
        let now = self.clock.now();
        let mut m = JobManifest {
            schema_version: SCHEMA_VERSION,
            story_id: input.story_id.clone(),
            status: JobStatus::Running,
            created_at: now,
            updated_at: now,
            config: config.clone(),
            input: InputRecord { story_text: input.story_text.clone(), character_refs, scene_ref },
            director_repairs: 0,
            sheets: Vec::new(),
            shots: Vec::new(),
            warnings: Vec::new(),
            error: None,
            checksum: String::new(),
        };
        let mut p = self.persister(&input.story_id);
        p.save(&mut m)?;
        self.drive(&mut m, &mut p)
    }

    /// Continues a job from its manifest. Shots already selected or failed
    /// are left alone unless `retry_failed` is set, in which case failed
    /// shots restart from the stage they failed in.
    pub fn resume(&self, story_id: &str, retry_failed: bool) -> Result<StoryboardResult, PipelineError> {
        let mut m = self.load_manifest(story_id)?;
        let mut p = self.persister(story_id);
        if retry_failed {
            let mut changed = false;
            for shot in m.shots.iter_mut().filter(|s| s.stage == Stage::Failed) {
                let back = shot.failed_at.unwrap_or(Stage::Directing);
                shot.stage = back;
                shot.history.push(back);
                shot.error = None;
                shot.failed_at = None;
                changed = true;
            }
            if m.sheets.is_empty() && m.status == JobStatus::Failed {
                changed = true;
            }
            if changed {
                m.status = JobStatus::Running;
                m.error = None;
                p.save(&mut m)?;
            }
        }
        match m.status {
            JobStatus::Completed | JobStatus::Partial | JobStatus::Failed => self.result(&m),
            JobStatus::Running => self.drive(&mut m, &mut p),
        }
    }

    fn drive(&self, m: &mut JobManifest, p: &mut Persister<'_>) -> Result<StoryboardResult, PipelineError> {
        if m.sheets.is_empty() {
            let input = self.story_input(m)?;
            info!("{}: directing", m.story_id);
            match director::build_dope_sheet(&input, &self.clients) {
                Ok(built) => {
                    m.director_repairs = built.repairs;
                    m.shots = (0..built.sheet.shots.len()).map(ShotRecord::new).collect();
                    m.sheets.push(SheetVersion::new(0, built.sheet, None));
                    p.save(m)?;
                }
                Err(e) => {
                    m.status = JobStatus::Failed;
                    m.error = Some(e.to_string());
                    p.save(m)?;
                    return Err(PipelineError::Director(e));
                }
            }
        }
        for i in 0..m.shots.len() {
            if !m.shots[i].stage.is_terminal() {
                self.run_shot(m, p, i)?;
            }
            if m.shots[i].stage == Stage::Failed && m.config.halt_policy == HaltPolicy::Halt {
                m.status = JobStatus::Failed;
                m.error = Some(format!("halted at shot {i}"));
                p.save(m)?;
                return self.result(m);
            }
        }
        let any_failed = m.shots.iter().any(|s| s.stage == Stage::Failed);
        m.status = if any_failed { JobStatus::Partial } else { JobStatus::Completed };
        p.save(m)?;
        self.result(m)
    }

    fn run_shot(&self, m: &mut JobManifest, p: &mut Persister<'_>, i: usize) -> Result<(), PipelineError> {
        while !m.shots[i].stage.is_terminal() {
            let stage = m.shots[i].stage;
            match self.step(m, p, i, stage) {
                Ok(()) => {}
                Err(StepError::Fatal(e)) => return Err(e),
                Err(StepError::Shot(e)) => {
                    warn!("{}: shot {i} failed in {stage:?}: {e}", m.story_id);
                    let shot = &mut m.shots[i];
                    shot.error = Some(e.to_string());
                    shot.enter(Stage::Failed);
                    p.save(m)?;
                }
            }
        }
        Ok(())
    }

    fn step(&self, m: &mut JobManifest, p: &mut Persister<'_>, i: usize, stage: Stage) -> Result<(), StepError> {
        let store = self.store();
        let cfg = m.config.clone();
        match stage {
            Stage::Directing => {
                let sheet = m.sheet().expect("directed").clone();
                let (frame, record, warning) = self.first_frame(m, &sheet, i)?;
                let hash = store.put(&frame)?;
                let shot = &mut m.shots[i];
                shot.warnings.extend(warning);
                shot.first_frame = Some(FirstFrameRecord { hash, ..record });
                let version = m.sheets.len() - 1;
                let prompt = artist::compose_prompt(&sheet, i);
                shot.attempts.push(Attempt::new(0, version, prompt, attempt_seed(cfg.seed, i, 0)));
                shot.enter(Stage::Generating);
                p.save(m)?;
            }
            Stage::Generating => {
                let ff = m.shots[i].first_frame.clone().expect("first frame recorded");
                let first = store.get(&ff.hash)?;
                let attempt = m.shots[i].attempt().expect("attempt").clone();
                let params = VideoParams {
                    frame_count: cfg.video.frame_count,
                    fps: cfg.video.fps,
                    seed: attempt.seed,
                };
                let job_id = match attempt.job_id {
                    Some(id) => {
                        info!("{}: shot {i} re-polling job {id}", m.story_id);
                        id
                    }
                    None => {
                        let id = artist::submit_first_frame(&first, &attempt.prompt, params, &self.clients)?;
                        m.shots[i].attempts.last_mut().expect("attempt").job_id = Some(id.clone());
                        p.save(m)?;
                        id
                    }
                };
                let traj = artist::collect_trajectory(&first, &job_id, params, ff.origin, &self.clients)?;
                let keys = traj.frames.iter().map(|f| store.put(f)).collect::<Result<Vec<_>, _>>()?;
                let shot = &mut m.shots[i];
                shot.attempts.last_mut().expect("attempt").frames = keys;
                shot.enter(Stage::ConsistencyReview);
                p.save(m)?;
            }
            Stage::ConsistencyReview => {
                let traj = self.trajectory(m, i)?;
                let sheet = m.sheet().expect("directed").clone();
                let round = m.shots[i].attempt().expect("attempt").round;
                let review = consistency::review_round(&traj, &sheet, i, round, &cfg.gate, &self.clients)?;
                let shot = &mut m.shots[i];
                let a = shot.attempts.last_mut().expect("attempt");
                a.keyframes = review.keyframes;
                a.caption = review.caption;
                a.caption_repairs = review.caption_repairs;
                let accepted = review.report.accepted;
                if let Some(w) = review.report.warning {
                    shot.warnings.push(format!(
                        "round {round}: {w:?}; accepted with failing {:?}",
                        review.report.failing
                    ));
                }
                shot.attempts.last_mut().expect("attempt").report = Some(review.report);
                shot.enter(if accepted { Stage::MixedReview } else { Stage::Refining });
                p.save(m)?;
            }
            Stage::Refining => {
                let sheet = m.sheet().expect("directed").clone();
                let a = m.shots[i].attempt().expect("attempt").clone();
                let report = a.report.clone().expect("reviewed");
                let review = RoundReview {
                    keyframes: a.keyframes.clone(),
                    caption: a.caption.clone(),
                    caption_repairs: a.caption_repairs,
                    report,
                };
                let (patches, next) = consistency::refine_failing(&sheet, i, &review, &cfg.gate, &self.clients)?;
                let version = m.sheets.len();
                let cause = Revision {
                    shot: i,
                    round: a.round,
                    dimensions: review.report.failing.clone(),
                };
                let prompt = artist::compose_prompt(&next, i);
                m.sheets.push(SheetVersion::new(version, next, Some(cause)));
                let shot = &mut m.shots[i];
                shot.attempts.last_mut().expect("attempt").patches = patches;
                let round = a.round + 1;
                shot.attempts.push(Attempt::new(round, version, prompt, attempt_seed(cfg.seed, i, round)));
                shot.enter(Stage::Generating);
                p.save(m)?;
            }
            Stage::MixedReview => {
                let traj = self.trajectory(m, i)?;
                let sheet = m.sheet().expect("directed").clone();
                let reference = self.tracking_reference(m, &sheet, i, &traj)?;
                let mut card: ScoreCard =
                    extremes::mixed_review(&traj, &reference, &sheet, i, &cfg.selection, &self.clients)?;
                let shot = &mut m.shots[i];
                let a = shot.attempt().expect("attempt");
                card.consistency_warning = a.report.as_ref().and_then(|r| r.warning);
                let hash = a.frames[card.selected].clone();
                shot.selected = Some(SelectedFrame { frame: card.selected, hash });
                shot.scorecard = Some(card);
                shot.enter(Stage::Selected);
                p.save(m)?;
            }
            Stage::Selected | Stage::Failed => {}
        }
        Ok(())
    }

    /// First frame for shot `i`, with the plan to record and any warning.
    fn first_frame(
        &self,
        m: &JobManifest,
        sheet: &DopeSheet,
        i: usize,
    ) -> Result<(Frame, FirstFrameRecord, Option<String>), StepError> {
        let store = self.store();
        let input = self.story_input(m)?;
        let mut entry = sheet.shots.get(i).ok_or_else(|| ShotError::Other(format!("shot {i} is not in the sheet")))?.clone();
        let mut warning = None;
        let mut prev = None;
        if entry.linkage.is_linked() {
            match i.checked_sub(1).and_then(|j| m.shots[j].selected.as_ref()) {
                Some(sel) => prev = Some(store.get(&sel.hash)?),
                None => {
                    let msg = format!("shot {i} links to a shot without a selected extreme; composing its first frame instead");
                    warn!("{}: {msg}", m.story_id);
                    warning = Some(msg);
                    entry.linkage = Linkage::F;
                }
            }
        }
        let (frame, plan) = if prev.is_none() && m.config.first_frame == FirstFrameMode::Provided {
            artist::provided_first_frame(input.scene_ref.as_ref(), &m.config.canvas)?
        } else {
            artist::compose_first_frame(
                &entry,
                &input.character_refs,
                input.scene_ref.as_ref(),
                prev.as_ref(),
                &m.config.canvas,
            )?
        };
        let origin = plan.origin;
        let plan = (origin != FrameOrigin::PreviousExtreme).then_some(plan);
        Ok((frame, FirstFrameRecord { hash: String::new(), origin, plan }, warning))
    }

    /// Keypoints are matched against the first of the shot's characters that
    /// has a reference image, else against frame 0.
    fn tracking_reference(
        &self,
        m: &JobManifest,
        sheet: &DopeSheet,
        i: usize,
        traj: &Trajectory,
    ) -> Result<Frame, StoreError> {
        let store = self.store();
        for c in &sheet.shots[i].characters {
            if let Some(r) = m.input.character_refs.iter().find(|r| r.name == c.name) {
                return Ok(image::DynamicImage::ImageRgba8(store.get_rgba(&r.hash)?).to_rgb8());
            }
        }
        Ok(traj.frames[0].clone())
    }

    fn trajectory(&self, m: &JobManifest, i: usize) -> Result<Trajectory, StoreError> {
        let store = self.store();
        let shot = &m.shots[i];
        let a = shot.attempt().expect("attempt");
        Ok(Trajectory {
            frames: a.frames.iter().map(|k| store.get(k)).collect::<Result<_, _>>()?,
            fps: m.config.video.fps,
            source: a.job_id.clone().unwrap_or_default(),
            first_frame_origin: shot.first_frame.as_ref().map_or(FrameOrigin::Composited, |f| f.origin),
        })
    }

    fn story_input(&self, m: &JobManifest) -> Result<StoryInput, StoreError> {
        let store = self.store();
        Ok(StoryInput {
            story_id: m.story_id.clone(),
            story_text: m.input.story_text.clone(),
            character_refs: m
                .input
                .character_refs
                .iter()
                .map(|r| Ok(CharacterRef { name: r.name.clone(), image: store.get_rgba(&r.hash)? }))
                .collect::<Result<_, StoreError>>()?,
            scene_ref: m.input.scene_ref.as_ref().map(|k| store.get(k)).transpose()?,
        })
    }

    fn result(&self, m: &JobManifest) -> Result<StoryboardResult, PipelineError> {
        let store = self.store();
        let mut shots = Vec::new();
        let mut failed = Vec::new();
        for s in &m.shots {
            match (&s.selected, &s.scorecard) {
                (Some(sel), Some(card)) => shots.push(ShotOutcome {
                    index: s.index,
                    frame_index: sel.frame,
                    hash: sel.hash.clone(),
                    frame: store.get(&sel.hash)?,
                    s_obj: card.selected_score().s_obj,
                    s_subj: card.verdict(card.selected).and_then(|v| v.s_subj),
                    sheet_version: s.attempt().map_or(0, |a| a.sheet_version),
                }),
                _ if s.stage == Stage::Failed => failed.push(s.index),
                _ => {}
            }
        }
        Ok(StoryboardResult {
            story_id: m.story_id.clone(),
            status: m.status,
            shots,
            failed,
            manifest_path: self.manifest_path(&m.story_id),
        })
    }
}

pub fn load_manifest(path: &Path) -> Result<JobManifest, PipelineError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let id = path.parent().and_then(|d| d.file_name()).map_or(String::new(), |n| n.to_string_lossy().into());
            return Err(PipelineError::NotFound(id));
        }
        Err(source) => return Err(PipelineError::Io { path: path.to_path_buf(), source }),
    };
    let corrupt = |reason: String| PipelineError::Corrupt { path: path.to_path_buf(), reason };
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("no schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(PipelineError::VersionMismatch { found: found as u32, expected: SCHEMA_VERSION });
    }
    let m: JobManifest = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let expected = m.compute_checksum();
    if m.checksum != expected {
        return Err(corrupt(format!("checksum {} does not match content ({expected})", m.checksum)));
    }
    Ok(m)
}
