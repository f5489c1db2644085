use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::backend::sim::{AestheticReply, ChatReply, Exhausted, ReplyQueue, Scenario, SimBackend, TrackPreset, TrackReply};
use crate::backend::wire::Endpoint;
use crate::backend::{BackendConfig, FrameOrigin, Track, TrackPoint, VideoParams};
use crate::dopesheet::fixtures;

fn pt(x: f64, y: f64) -> TrackPoint<f64> {
    TrackPoint { x, y, visible: true }
}

fn set(tracks: Vec<Vec<TrackPoint<f64>>>) -> TrackSetOf<f64> {
    TrackSetOf {
        frame_count: tracks.first().map_or(0, |t| t.len()),
        tracks: tracks.into_iter().enumerate().map(|(i, points)| Track { id: i as u32, points }).collect(),
        no_correspondence: false,
    }
}

/// Direct transcription of the motion score: per frame, loop over tracks,
/// keep those visible at both ends, average the Euclidean step lengths.
fn oracle(ts: &TrackSetOf<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..ts.frame_count {
        if t == 0 {
            out.push(0.0);
            continue;
        }
        let mut total = 0.0;
        let mut n = 0.0;
        for i in 0..ts.tracks.len() {
            let p = ts.tracks[i].points[t];
            let q = ts.tracks[i].points[t - 1];
            if p.visible && q.visible {
                let dx = p.x - q.x;
                let dy = p.y - q.y;
                total += (dx * dx + dy * dy).sqrt();
                n += 1.0;
            }
        }
        out.push(if n == 0.0 { 0.0 } else { total / n });
    }
    out
}

fn arb_tracks() -> impl Strategy<Value = TrackSetOf<f64>> {
    (1usize..=20, 0usize..=10).prop_flat_map(|(frames, n)| {
        prop::collection::vec(
            prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0, prop::bool::weighted(0.8)), frames),
            n,
        )
        .prop_map(move |tracks| TrackSetOf {
            frame_count: frames,
            tracks: tracks
                .into_iter()
                .enumerate()
                .map(|(i, pts)| Track {
                    id: i as u32,
                    points: pts.into_iter().map(|(x, y, visible)| TrackPoint { x, y, visible }).collect(),
                })
                .collect(),
            no_correspondence: false,
        })
    })
}

#[test]
fn three_four_five() {
    let ts = set(vec![vec![pt(0.0, 0.0), pt(3.0, 4.0)], vec![pt(1.0, 1.0), pt(1.0, 1.0)]]);
    let m = motion_scores(&ts);
    assert_eq!(m.values, vec![0.0, 2.5]);
    assert_eq!(m.low_confidence, vec![false, false]);
}

#[test]
fn constant_tracks_do_not_move() {
    let ts = set(vec![vec![pt(4.0, 2.0); 6]; 3]);
    assert!(motion_scores(&ts).values.iter().all(|&v| v == 0.0));
}

#[test]
fn occluded_frames_are_flagged() {
    let mut a = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(5.0, 0.0)];
    a[1].visible = false;
    let ts = set(vec![a]);
    let m = motion_scores(&ts);
    assert_eq!(m.values, vec![0.0, 0.0, 0.0]);
    assert_eq!(m.low_confidence, vec![false, true, true]);
    let empty = motion_scores(&TrackSetOf::<f64>::empty(4));
    assert_eq!(empty.values, vec![0.0; 4]);
    assert_eq!(empty.low_confidence, vec![false, true, true, true]);
}

#[test]
fn single_precision_matches() {
    let ts = set(vec![vec![pt(0.0, 0.0), pt(3.0, 4.0)]]).map_points(|x, y| (x, y));
    let single = TrackSetOf::<f32> {
        frame_count: ts.frame_count,
        no_correspondence: false,
        tracks: ts
            .tracks
            .iter()
            .map(|t| Track {
                id: t.id,
                points: t.points.iter().map(|p| TrackPoint { x: p.x as f32, y: p.y as f32, visible: true }).collect(),
            })
            .collect(),
    };
    assert_eq!(motion_scores(&single).values, vec![0.0f32, 5.0]);
}

proptest! {
    #[test]
    fn matches_the_oracle(ts in arb_tracks()) {
        let got = motion_scores(&ts).values;
        let want = oracle(&ts);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-9, "{} vs {}", g, w);
            prop_assert!(*g >= 0.0);
        }
    }

    #[test]
    fn rigid_motions_preserve_scores(ts in arb_tracks(), dx in -1e3f64..1e3, dy in -1e3f64..1e3, theta in -3.2f64..3.2) {
        let base = motion_scores(&ts).values;
        let (s, c) = theta.sin_cos();
        let moved = motion_scores(&ts.map_points(|x, y| (c * x - s * y + dx, s * x + c * y + dy))).values;
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn affine_rescaling_keeps_candidates(
        aes in prop::collection::vec(0u32..1000, 1..30),
        seed in prop::collection::vec(0u32..1000, 30),
        a in 1u32..20,
        b in -50i32..50,
        on_aes in any::<bool>(),
    ) {
        let aes: Vec<f64> = aes.iter().map(|&v| v as f64 / 100.0).collect();
        let mos: Vec<f64> = seed[..aes.len()].iter().map(|&v| v as f64 / 10.0).collect();
        let f = |v: &f64| a as f64 * v + b as f64;
        let (aes2, mos2): (Vec<f64>, Vec<f64>) = if on_aes {
            (aes.iter().map(f).collect(), mos.clone())
        } else {
            (aes.clone(), mos.iter().map(f).collect())
        };
        let o1 = objective_scores(&aes, &mos, 5).unwrap();
        let o2 = objective_scores(&aes2, &mos2, 5).unwrap();
        for (x, y) in o1.frames.iter().zip(&o2.frames) {
            prop_assert!((x.s_obj - y.s_obj).abs() < 1e-12);
        }
        // near-ties can reorder under rounding; only compare well-separated rankings
        let mut sorted: Vec<f64> = o1.frames.iter().map(|f| f.s_obj).collect();
        sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let separated = sorted.windows(2).all(|w| w[0] == w[1] || w[0] - w[1] > 1e-9);
        if separated {
            prop_assert_eq!(&o1.candidates, &o2.candidates);
            let subj = BTreeMap::new();
            let s1: Vec<f64> = o1.frames.iter().map(|f| f.s_obj).collect();
            let s2: Vec<f64> = o2.frames.iter().map(|f| f.s_obj).collect();
            prop_assert_eq!(
                select_extreme(&o1.candidates, &subj, &s1).unwrap(),
                select_extreme(&o2.candidates, &subj, &s2).unwrap()
            );
        }
    }

    #[test]
    fn selection_stays_in_the_shortlist(
        s_obj in prop::collection::vec(0.0f64..1.0, 1..25),
        triads in prop::collection::vec(prop::option::of(0u8..=15), 5),
    ) {
        let cands = top_k(&s_obj, 5);
        let subj: BTreeMap<usize, f64> = cands
            .iter()
            .zip(&triads)
            .filter_map(|(&i, t)| Some((i, (*t)? as f64 / 3.0)))
            .collect();
        let (sel, tie) = select_extreme(&cands, &subj, &s_obj).unwrap();
        prop_assert!(cands.contains(&sel));
        if subj.is_empty() {
            prop_assert_eq!(tie, TieBreak::Fallback);
            prop_assert_eq!(sel, cands[0]);
        } else {
            let best = subj.values().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(subj[&sel], best);
        }
    }

    #[test]
    fn triads_parse_exactly_in_range(a in 0i64..=9, e in 0i64..=9, p in 0i64..=9) {
        let parsed = parse_triad(&format!("{{\"alignment\": {a}, \"expressiveness\": {e}, \"persuasiveness\": {p}}}"));
        let ok = a <= 5 && e <= 5 && p <= 5;
        prop_assert_eq!(parsed.is_ok(), ok);
        if let Ok(t) = parsed {
            prop_assert!((0.0..=5.0).contains(&t.s_subj()));
            prop_assert_eq!(t.s_subj(), (a + e + p) as f64 / 3.0);
        }
    }
}

#[test]
fn normalization_edges() {
    assert_eq!(min_max_normalize(&[3.0, 3.0, 3.0]), vec![0.5; 3]);
    assert_eq!(min_max_normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    let mos = [0.0, 1.5, 4.0, 2.0];
    let shifted: Vec<f64> = mos.iter().map(|m| 2.0 * m + 7.0).collect();
    assert_eq!(min_max_normalize(&mos), min_max_normalize(&shifted));
}

#[test]
fn objective_shortlist() {
    let aes: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let mos = aes.clone();
    let o = objective_scores(&aes, &mos, 5).unwrap();
    assert_eq!(o.candidates, vec![9, 8, 7, 6, 5]);
    let short = objective_scores(&[5.0, 6.0, 5.5], &[0.0, 1.0, 2.0], 5).unwrap();
    assert_eq!(short.candidates.len(), 3);
    assert_eq!(short.frames[0].s_obj, 0.0);
    assert_eq!(
        objective_scores(&[1.0], &[1.0, 2.0], 5).unwrap_err(),
        ExtremesError::LengthMismatch { aes: 1, mos: 2 }
    );
    assert_eq!(objective_scores(&[], &[], 5).unwrap_err(), ExtremesError::Empty);
    let tie = objective_scores(&[1.0, 1.0, 1.0], &[0.0, 2.0, 2.0], 2).unwrap();
    assert_eq!(tie.candidates, vec![1, 2]);
}

#[test]
fn triad_means() {
    let t = parse_triad("4, 3, 5").unwrap();
    assert_eq!(t.s_subj(), 4.0);
    assert_eq!(parse_triad("[0,0,0]").unwrap().s_subj(), 0.0);
    assert!(parse_triad("7,3,2").unwrap_err().contains("alignment"));
    assert!(parse_triad("{\"alignment\": 3.5, \"expressiveness\": 1, \"persuasiveness\": 1}").is_err());
    assert!(parse_triad("{\"alignment\": 3, \"expressiveness\": 1}").unwrap_err().contains("persuasiveness"));
    assert!(parse_triad("great frame").is_err());
    assert!(parse_triad("1 2").is_err());
}

#[test]
fn selection_tie_breaks() {
    let s_obj = [0.1, 0.9, 0.5, 0.5];
    let distinct: BTreeMap<_, _> = [(1, 2.0), (2, 4.0), (3, 3.0)].into();
    assert_eq!(select_extreme(&[1, 2, 3], &distinct, &s_obj).unwrap(), (2, TieBreak::None));
    let equal: BTreeMap<_, _> = [(1, 3.0), (2, 3.0), (3, 3.0)].into();
    assert_eq!(select_extreme(&[1, 2, 3], &equal, &s_obj).unwrap(), (1, TieBreak::ObjectiveScore));
    let full: BTreeMap<_, _> = [(2, 3.0), (3, 3.0)].into();
    assert_eq!(select_extreme(&[2, 3], &full, &s_obj).unwrap(), (2, TieBreak::FrameIndex));
    assert_eq!(select_extreme(&[2, 3, 1], &BTreeMap::new(), &s_obj).unwrap(), (1, TieBreak::Fallback));
    assert_eq!(select_extreme(&[], &distinct, &s_obj).unwrap_err(), ExtremesError::NoCandidates);
}

fn clients(scenario: Scenario) -> (ModelClients, Arc<SimBackend>) {
    let sim = Arc::new(SimBackend::new(scenario));
    let mut cfg = BackendConfig::default();
    cfg.i2v.poll_interval_secs = 0.0001;
    (ModelClients::new(sim.clone(), cfg), sim)
}

fn trajectory(c: &ModelClients, n: u32) -> Trajectory {
    let first = Frame::from_fn(32, 18, |x, y| image::Rgb([x as u8 * 7, y as u8 * 13, 60]));
    c.generate_video(&first, "p", VideoParams { frame_count: n, fps: 8, seed: 1 }, FrameOrigin::Composited)
        .unwrap()
}

fn critic(replies: Vec<ChatReply>, exhausted: Exhausted) -> ReplyQueue {
    ReplyQueue { replies, when_exhausted: Some(exhausted) }
}

#[test]
fn constant_triads_select_the_objective_best() {
    let mut scenario = Scenario::default();
    scenario.chat.critic = critic(vec![ChatReply::Raw("3, 3, 3".into())], Exhausted::RepeatLast);
    let (c, sim) = clients(scenario);
    let traj = trajectory(&c, 12);
    let ds = fixtures::sheet(1);
    let card = mixed_review(&traj, &traj.frames[0], &ds, 0, &SelectionConfig::default(), &c).unwrap();
    assert_eq!(card.candidates.len(), 5);
    assert_eq!(card.selected, card.candidates[0]);
    assert_eq!(card.tie_break, TieBreak::ObjectiveScore);
    assert_eq!(sim.count(Endpoint::Aesthetic), 12);
    assert_eq!(sim.count(Endpoint::Track), 1);
    assert_eq!(sim.count(Endpoint::Chat), 5);
    assert!(card.verdicts.iter().all(|v| v.s_subj == Some(3.0)));
}

#[test]
fn critic_repairs_and_drops() {
    let mut scenario = Scenario::default();
    scenario.chat.critic = critic(
        vec![
            ChatReply::Raw("7,3,2".into()),
            ChatReply::Raw("4,3,5".into()),
            ChatReply::Raw("nope".into()),
            ChatReply::Raw("still nope".into()),
        ],
        Exhausted::Procedural,
    );
    let (c, _) = clients(scenario);
    let traj = trajectory(&c, 8);
    let card = mixed_review(&traj, &traj.frames[0], &fixtures::sheet(1), 0, &SelectionConfig::default(), &c).unwrap();
    let first = &card.verdicts[0];
    assert_eq!(first.repairs, 1);
    assert_eq!(first.triad, Some(Triad { alignment: 4, expressiveness: 3, persuasiveness: 5 }));
    assert_eq!(first.s_subj, Some(4.0));
    assert!(card.verdicts[1].triad.is_none() && card.verdicts[1].error.is_some());
    assert_ne!(card.selected, card.verdicts[1].index);
    assert!(card.candidates.contains(&card.selected));
}

#[test]
fn all_candidates_dropped_falls_back() {
    let mut scenario = Scenario::default();
    scenario.chat.critic = critic(vec![ChatReply::Raw("?".into())], Exhausted::RepeatLast);
    let (c, _) = clients(scenario);
    let traj = trajectory(&c, 8);
    let card = mixed_review(&traj, &traj.frames[0], &fixtures::sheet(1), 0, &SelectionConfig::default(), &c).unwrap();
    assert_eq!(card.tie_break, TieBreak::Fallback);
    assert_eq!(card.selected, card.candidates[0]);
}

#[test]
fn no_correspondence_scores_by_aesthetics() {
    let mut scenario = Scenario::default();
    scenario.track.responses = vec![TrackReply::Preset(TrackPreset::NoMatch)];
    scenario.aesthetic.responses = [5.0, 9.0, 1.0, 2.0].map(AestheticReply::Score).to_vec();
    let (c, _) = clients(scenario);
    let traj = trajectory(&c, 4);
    let card = mixed_review(&traj, &traj.frames[0], &fixtures::sheet(1), 0, &SelectionConfig::default(), &c).unwrap();
    assert!(card.no_correspondence);
    assert_eq!(card.candidates, vec![1, 0, 3, 2]);
    assert!(card.frames[1..].iter().all(|f| f.low_confidence));
}

#[test]
fn csv_has_one_row_per_frame() {
    let (c, _) = clients(Scenario::default());
    let traj = trajectory(&c, 6);
    let card = mixed_review(&traj, &traj.frames[0], &fixtures::sheet(1), 0, &SelectionConfig::default(), &c).unwrap();
    let mut buf = Vec::new();
    write_scores_csv(&[(0, &card), (1, &card)], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    assert!(text.starts_with("shot,frame,aes_raw,mos_raw"));
    let selected_rows = text.lines().filter(|l| l.ends_with(",1")).count();
    assert_eq!(selected_rows, 2);
}
