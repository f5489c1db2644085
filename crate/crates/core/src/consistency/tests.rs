use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::artist;
use crate::backend::sim::{ChatReply, Exhausted, ReplyQueue, Scenario, SimBackend};
use crate::backend::wire::Endpoint;
use crate::backend::{BackendConfig, FrameOrigin, VideoParams};
use crate::dopesheet::{fixtures, serialize};
use crate::imaging::Frame;

#[test]
fn tail_of_one_hundred() {
    assert_eq!(sample_tail_keyframes(100, 5, 0.25), vec![75, 81, 87, 93, 99]);
}

#[test]
fn short_trajectories_degrade() {
    assert_eq!(sample_tail_keyframes(5, 5, 0.25), vec![3, 4]);
    assert_eq!(sample_tail_keyframes(1, 5, 0.25), vec![0]);
    assert_eq!(sample_tail_keyframes(0, 5, 0.25), Vec::<usize>::new());
    assert_eq!(sample_tail_keyframes(20, 5, 0.25), vec![15, 16, 17, 18, 19]);
    assert_eq!(sample_tail_keyframes(49, 5, 0.25), vec![36, 39, 42, 45, 48]);
}

proptest! {
    #[test]
    fn tail_samples_are_ascending_and_end_last(len in 1usize..400, k in 1usize..9) {
        let idx = sample_tail_keyframes(len, k, 0.25);
        prop_assert_eq!(*idx.last().unwrap(), len - 1);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.len() <= k);
        let window = ((0.25 * len as f64).ceil() as usize).max(1);
        prop_assert!(idx[0] >= len - window);
    }

    #[test]
    fn cosine_stays_in_range(a in prop::collection::vec(-1e3f64..1e3, 1..16), seed in any::<u64>()) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * ((seed >> (i % 60)) & 3) as f64 - 1.0).collect();
        if let Some(c) = cosine(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn lowering_the_threshold_never_adds_failures(
        scores in prop::collection::vec(-1.0f64..=1.0, 5),
        t in -1.0f64..=1.0,
        delta in 0.0f64..1.0,
    ) {
        let map: BTreeMap<_, _> = DimensionKey::ALL.into_iter().zip(scores).collect();
        let strict = failing_dimensions(&map, t);
        let loose = failing_dimensions(&map, t - delta);
        prop_assert!(loose.iter().all(|d| strict.contains(d)));
    }
}

#[test]
fn hand_computed_cosines() {
    let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert_eq!(cosine(&[0.0, 2.0], &[3.0, 0.0]), Some(0.0));
    assert_eq!(cosine(&[0.0, 0.0], &[3.0, 0.0]), None);
    let single = cosine(&[1.0f32, 1.0], &[1.0, 0.0]).unwrap();
    assert!((single - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
}

#[test]
fn gate_semantics() {
    let mut scores = BTreeMap::new();
    for d in DimensionKey::ALL {
        scores.insert(d, (Some(0.9), false));
    }
    scores.insert(DimensionKey::Scene, (Some(std::f64::consts::FRAC_1_SQRT_2), false));
    let r = ConsistencyReport::gate(0, 0.8, &scores, false);
    assert_eq!(r.failing, vec![DimensionKey::Scene]);
    assert!(!r.accepted);
    let last = ConsistencyReport::gate(2, 0.8, &scores, true);
    assert!(last.accepted);
    assert_eq!(last.warning, Some(ReportWarning::MaxRoundsExhausted));
    scores.insert(DimensionKey::Scene, (Some(0.8), false));
    assert!(ConsistencyReport::gate(0, 0.8, &scores, false).accepted);
}

#[test]
fn caption_replies_ignore_index_and_linkage() {
    let mut shot = fixtures::shot(0, crate::dopesheet::Linkage::F);
    shot.index = 7;
    let text = format!("Here you go:\n```json\n{}\n```", serde_json::to_string(&shot).unwrap());
    let parsed = parse_caption_reply(&text, 2).unwrap();
    assert_eq!(parsed.index, 2);
    assert_eq!(parsed.scene, shot.scene);
    let err = parse_caption_reply(r#"{"characters": []}"#, 0).unwrap_err();
    assert!(err.contains("shot"), "{err}");
}

fn sim_with(scenario: Scenario) -> (ModelClients, Arc<SimBackend>) {
    let sim = Arc::new(SimBackend::new(scenario));
    let mut cfg = BackendConfig::default();
    cfg.i2v.poll_interval_secs = 0.0001;
    (ModelClients::new(sim.clone(), cfg), sim)
}

fn trajectory(c: &ModelClients) -> Trajectory {
    let first = Frame::from_fn(32, 18, |x, y| image::Rgb([x as u8 * 5, y as u8 * 9, 40]));
    c.generate_video(&first, "p", VideoParams { frame_count: 12, fps: 8, seed: 0 }, FrameOrigin::Composited)
        .unwrap()
}

#[test]
fn scripted_embeddings_give_one_over_root_two() {
    let ds = fixtures::sheet(1);
    let shot = &ds.shots[0];
    let mut caption = shot.clone();
    caption.scene.environment = "beach".into();
    let mut scenario = Scenario::default();
    let cap_text = shot_dimension_text(&caption, DimensionKey::Scene);
    let ori_text = shot_dimension_text(shot, DimensionKey::Scene);
    scenario.embed.dim = 2;
    scenario.embed.overrides.insert(cap_text, vec![1.0, 1.0]);
    scenario.embed.overrides.insert(ori_text, vec![1.0, 0.0]);
    let (c, _) = sim_with(scenario);
    let scores = consistency_scores(shot, &caption, &c).unwrap();
    let (cs, zero) = scores[&DimensionKey::Scene];
    assert!((cs - 1.0 / 2f64.sqrt()).abs() < 1e-9);
    assert!(!zero);
    assert!((scores[&DimensionKey::Shots].0 - 1.0).abs() < 1e-12);
}

#[test]
fn zero_embeddings_score_zero_with_a_flag() {
    let ds = fixtures::sheet(1);
    let shot = &ds.shots[0];
    let mut scenario = Scenario::default();
    scenario.embed.overrides.insert(shot_dimension_text(shot, DimensionKey::Relationships), vec![0.0; 64]);
    let (c, _) = sim_with(scenario);
    let scores = consistency_scores(shot, shot, &c).unwrap();
    assert_eq!(scores[&DimensionKey::Relationships], (0.0, true));
}

fn director_knows(ds: &DopeSheet, scenario: &mut Scenario) {
    scenario.chat.director = ReplyQueue {
        replies: vec![ChatReply::Raw(serialize(ds))],
        when_exhausted: None,
    };
}

fn build(c: &ModelClients, ds: &DopeSheet) {
    let input = crate::director::StoryInput {
        story_id: ds.story_id.clone(),
        ..crate::director::StoryInput::new("a story")
    };
    crate::director::build_dope_sheet(&input, c).unwrap();
}

#[test]
fn faithful_captions_accept_immediately() {
    let ds = fixtures::sheet(2);
    let mut scenario = Scenario::default();
    director_knows(&ds, &mut scenario);
    let (c, sim) = sim_with(scenario);
    build(&c, &ds);
    let traj = trajectory(&c);
    let out = run_refinement_loop::<ReviewError>(&ds, 1, traj, &GateConfig::default(), &c, |_| unreachable!()).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert!(out.reports[0].accepted && out.reports[0].failing.is_empty());
    assert!(out.patches.is_empty());
    assert_eq!(out.i2v_calls, 1);
    assert_eq!(sim.count(Endpoint::I2vSubmit), 1);
}

#[test]
fn only_the_drifting_dimension_is_patched() {
    let ds = fixtures::sheet(2);
    let mut drifted = ds.shots[1].clone();
    drifted.scene.environment = "beach".into();
    let mut scenario = Scenario::default();
    director_knows(&ds, &mut scenario);
    scenario.chat.caption = ReplyQueue {
        replies: vec![ChatReply::Raw(serde_json::to_string(&drifted).unwrap())],
        when_exhausted: None,
    };
    let (c, _) = sim_with(scenario);
    build(&c, &ds);
    let traj = trajectory(&c);
    let out = run_refinement_loop::<ReviewError>(&ds, 1, traj, &GateConfig::default(), &c, |_| Ok(trajectory(&c)))
        .unwrap();
    assert_eq!(out.reports[0].failing, vec![DimensionKey::Scene]);
    assert_eq!(out.patches.len(), 1);
    assert_eq!(out.patches[0].len(), 1);
    assert_eq!(out.patches[0][0].dimension(), DimensionKey::Scene);
    assert!(out.reports[1].accepted && out.reports[1].warning.is_none());
    assert_eq!(out.i2v_calls, 2);
    let diff = crate::dopesheet::changed_dimensions(&ds, &out.sheet);
    assert_eq!(diff.dimensions.into_iter().collect::<Vec<_>>(), vec![(1, DimensionKey::Scene)]);
}

#[test]
fn adversarial_captions_exhaust_two_rounds() {
    let ds = fixtures::sheet(1);
    let mut scenario = Scenario::default();
    scenario.chat.caption.when_exhausted = Some(Exhausted::Adversarial);
    let (c, sim) = sim_with(scenario);
    let traj = trajectory(&c);
    let out = run_refinement_loop::<ReviewError>(&ds, 0, traj, &GateConfig::default(), &c, |_| Ok(trajectory(&c)))
        .unwrap();
    assert_eq!(out.reports.len(), 3);
    assert_eq!(out.patches.len(), 2);
    assert_eq!(out.i2v_calls, 3);
    assert_eq!(sim.count(Endpoint::I2vSubmit), 3);
    let last = out.reports.last().unwrap();
    assert!(last.accepted);
    assert_eq!(last.warning, Some(ReportWarning::MaxRoundsExhausted));
    for (round, patches) in out.patches.iter().enumerate() {
        let dims: Vec<_> = patches.iter().map(|p| p.dimension()).collect();
        assert_eq!(dims, out.reports[round].failing);
    }
}

#[test]
fn unparseable_captions_fail_every_dimension() {
    let ds = fixtures::sheet(1);
    let mut scenario = Scenario::default();
    scenario.chat.caption = ReplyQueue {
        replies: vec![ChatReply::Raw("nope".into())],
        when_exhausted: Some(Exhausted::RepeatLast),
    };
    let (c, _) = sim_with(scenario);
    let traj = trajectory(&c);
    let review = review_round(&traj, &ds, 0, 0, &GateConfig::default(), &c).unwrap();
    assert_eq!(review.report.failing, DimensionKey::ALL.to_vec());
    assert!(review.caption.is_none());
    assert!(review.report.caption_error.is_some());
    let (patches, _) = refine_failing(&ds, 0, &review, &GateConfig::default(), &c).unwrap();
    assert_eq!(patches.len(), 5);
}

#[test]
fn captioning_needs_frames() {
    let (c, _) = sim_with(Scenario::default());
    assert!(matches!(caption_to_dopesheet(&[], 0, &c), Err(ReviewError::Precondition(_))));
}

#[test]
fn refinement_keeps_the_first_frame() {
    // the loop recomposes the prompt only; the anchor frame is reused
    let ds = fixtures::sheet(1);
    let mut scenario = Scenario::default();
    scenario.chat.caption.when_exhausted = Some(Exhausted::Adversarial);
    let (c, sim) = sim_with(scenario);
    let first = trajectory(&c).frames[0].clone();
    let mut prompts_seen = Vec::new();
    run_refinement_loop::<ReviewError>(&ds, 0, trajectory(&c), &GateConfig::default(), &c, |sheet| {
        prompts_seen.push(artist::compose_prompt(sheet, 0));
        Ok(c.generate_video(&first, prompts_seen.last().unwrap(), VideoParams { frame_count: 12, fps: 8, seed: 0 }, FrameOrigin::Composited)
            .unwrap())
    })
    .unwrap();
    let hashes: Vec<_> = sim
        .log()
        .into_iter()
        .filter(|e| e.endpoint == Endpoint::I2vSubmit)
        .map(|e| e.first_frame_hash.unwrap())
        .collect();
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    assert_ne!(prompts_seen[0], prompts_seen[1]);
}
