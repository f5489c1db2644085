//! Static report of a job: a contact sheet of the selected extremes, the
//! per-frame scores as CSV, and the review record as JSON.

use std::path::{Path, PathBuf};

use font8x8::UnicodeFonts;
use image::imageops::{self, FilterType};
use image::Rgb;
use serde::Serialize;

use crate::consistency::ConsistencyReport;
use crate::extremes::{self, ScoreCard};
use crate::imaging::{self, Frame};
use crate::pipeline::store::{self, FrameStore, StoreError};
use crate::pipeline::{JobManifest, JobStatus, Stage};

pub const CELL_WIDTH: u32 = 320;
pub const COLUMNS: usize = 3;
const GLYPH: u32 = 8;
const TEXT_LINES: usize = 4;
const PAD: u32 = 8;
const BACKDROP: Rgb<u8> = Rgb([250, 250, 245]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);
const GAP: Rgb<u8> = Rgb([120, 30, 30]);

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("job {0} has no selected shots")]
    NoSelectedShots(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub storyboard: PathBuf,
    pub scores: PathBuf,
    pub report: PathBuf,
}

#[derive(Serialize)]
struct ShotReport<'a> {
    index: usize,
    stage: Stage,
    description: Option<&'a str>,
    sheet_version: Option<usize>,
    selected_frame: Option<usize>,
    selected_hash: Option<&'a str>,
    scorecard: Option<&'a ScoreCard>,
    consistency_reports: Vec<&'a ConsistencyReport>,
    warnings: &'a [String],
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct JobReport<'a> {
    story_id: &'a str,
    status: JobStatus,
    sheet_versions: usize,
    shots: Vec<ShotReport<'a>>,
}

fn description(m: &JobManifest, index: usize) -> Option<&str> {
    m.sheet().and_then(|s| s.shots.get(index)).map(|s| s.shot.description.as_str())
}

/// Contact sheet, `scores.csv` and `report.json` for `m`, written to `out`.
pub fn render_report(m: &JobManifest, frames: &FrameStore, out: &Path) -> Result<ReportFiles, ReportError> {
    if !m.shots.iter().any(|s| s.stage == Stage::Selected) {
        return Err(ReportError::NoSelectedShots(m.story_id.clone()));
    }
    let files = ReportFiles {
        storyboard: out.join("storyboard.png"),
        scores: out.join("scores.csv"),
        report: out.join("report.json"),
    };
    let sheet = contact_sheet(m, frames)?;
    store::write_atomic(&files.storyboard, &imaging::encode_png(&sheet))?;

    let cards: Vec<(usize, &ScoreCard)> = m.shots.iter().filter_map(|s| Some((s.index, s.scorecard.as_ref()?))).collect();
    let mut csv_bytes = Vec::new();
    extremes::write_scores_csv(&cards, &mut csv_bytes)?;
    store::write_atomic(&files.scores, &csv_bytes)?;

    let report = JobReport {
        story_id: &m.story_id,
        status: m.status,
        sheet_versions: m.sheets.len(),
        shots: m
            .shots
            .iter()
            .map(|s| ShotReport {
                index: s.index,
                stage: s.stage,
                description: description(m, s.index),
                sheet_version: s.attempt().map(|a| a.sheet_version),
                selected_frame: s.selected.as_ref().map(|x| x.frame),
                selected_hash: s.selected.as_ref().map(|x| x.hash.as_str()),
                scorecard: s.scorecard.as_ref(),
                consistency_reports: s.attempts.iter().filter_map(|a| a.report.as_ref()).collect(),
                warnings: &s.warnings,
                error: s.error.as_deref(),
            })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    store::write_atomic(&files.report, &json)?;
    Ok(files)
}

/// Grid of the selected extremes in shot order. Shots without a selection
/// get a marked gap cell.
pub fn contact_sheet(m: &JobManifest, frames: &FrameStore) -> Result<Frame, StoreError> {
    let selected: Vec<Option<Frame>> = m
        .shots
        .iter()
        .map(|s| s.selected.as_ref().map(|x| frames.get(&x.hash)).transpose())
        .collect::<Result<_, _>>()?;
    let aspect = selected
        .iter()
        .flatten()
        .next()
        .map_or(9.0 / 16.0, |f| f.height() as f64 / f.width().max(1) as f64);
    let image_h = ((CELL_WIDTH as f64 * aspect).round() as u32).max(1);
    let cell_h = image_h + PAD + TEXT_LINES as u32 * (GLYPH + 2) + PAD;
    let cols = m.shots.len().clamp(1, COLUMNS);
    let rows = m.shots.len().div_ceil(cols).max(1);
    let mut canvas = Frame::from_pixel(
        cols as u32 * (CELL_WIDTH + PAD) + PAD,
        rows as u32 * (cell_h + PAD) + PAD,
        BACKDROP,
    );
    let chars_per_line = (CELL_WIDTH / GLYPH) as usize;
    for (k, (shot, frame)) in m.shots.iter().zip(&selected).enumerate() {
        let x = PAD + (k % cols) as u32 * (CELL_WIDTH + PAD);
        let y = PAD + (k / cols) as u32 * (cell_h + PAD);
        let mut lines = Vec::new();
        match frame {
            Some(f) => {
                let scaled = imageops::resize(f, CELL_WIDTH, image_h, FilterType::Triangle);
                imageops::replace(&mut canvas, &scaled, x as i64, y as i64);
                let card = shot.scorecard.as_ref();
                let s_obj = card.map_or(0.0, |c| c.selected_score().s_obj);
                let s_subj = card
                    .and_then(|c| c.verdict(c.selected))
                    .and_then(|v| v.s_subj)
                    .map_or("-".to_string(), |v| format!("{v:.2}"));
                lines.push(format!(
                    "shot {} frame {} obj {s_obj:.2} subj {s_subj}",
                    shot.index,
                    shot.selected.as_ref().map_or(0, |s| s.frame)
                ));
            }
            None => {
                fill(&mut canvas, x, y, CELL_WIDTH, image_h, GAP);
                let label = if shot.stage == Stage::Failed { "FAILED" } else { "NOT RUN" };
                draw_text(&mut canvas, x + PAD, y + image_h / 2 - GLYPH / 2, label, BACKDROP);
                lines.push(format!("shot {} {}", shot.index, label.to_lowercase()));
            }
        }
        let text = description(m, shot.index).unwrap_or("");
        lines.extend(wrap(text, chars_per_line));
        for (n, line) in lines.iter().take(TEXT_LINES).enumerate() {
            draw_text(&mut canvas, x, y + image_h + PAD + n as u32 * (GLYPH + 2), line, INK);
        }
    }
    Ok(canvas)
}

fn fill(img: &mut Frame, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
    for yy in y..(y + h).min(img.height()) {
        for xx in x..(x + w).min(img.width()) {
            img.put_pixel(xx, yy, color);
        }
    }
}

fn wrap(text: &str, width: usize) -> Vec<String> {
    let mut lines = Vec::new();
    let mut line = String::new();
    for word in text.split_whitespace() {
        if !line.is_empty() && line.chars().count() + 1 + word.chars().count() > width {
            lines.push(std::mem::take(&mut line));
        }
        if !line.is_empty() {
            line.push(' ');
        }
        line.push_str(word);
    }
    if !line.is_empty() {
        lines.push(line);
    }
    lines
}

/// 8×8 bitmap text; characters outside basic Latin render as `?`.
pub fn draw_text(img: &mut Frame, x: u32, y: u32, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?')).expect("'?' glyph");
        let gx = x + i as u32 * GLYPH;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8u32 {
                let (px, py) = (gx + col, y + row as u32);
                if bits & (1 << col) != 0 && px < img.width() && py < img.height() {
                    img.put_pixel(px, py, color);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapping_respects_width() {
        let lines = wrap("a bb ccc dddd eeeee", 6);
        assert_eq!(lines, vec!["a bb", "ccc", "dddd", "eeeee"]);
        assert!(wrap("", 5).is_empty());
    }

    #[test]
    fn text_leaves_ink() {
        let mut img = Frame::from_pixel(20, 10, BACKDROP);
        draw_text(&mut img, 1, 1, "H", INK);
        assert!(img.pixels().any(|p| *p == INK));
        let mut other = Frame::from_pixel(20, 10, BACKDROP);
        draw_text(&mut other, 1, 1, "\u{4e2d}", INK);
        let mut q = Frame::from_pixel(20, 10, BACKDROP);
        draw_text(&mut q, 1, 1, "?", INK);
        assert_eq!(other, q);
    }
}
