use std::sync::Arc;

use super::*;
use crate::backend::sim::{JobScript, Scenario, SimBackend};
use crate::backend::wire::Endpoint;
use crate::backend::BackendConfig;
use crate::dopesheet::{fixtures, LayoutSlot, Linkage};

fn sprite(w: u32, h: u32) -> RgbaImage {
    RgbaImage::from_pixel(w, h, Rgba([250, 20, 20, 255]))
}

fn mia() -> Vec<CharacterRef> {
    vec![CharacterRef {
        name: "Mia".into(),
        image: sprite(40, 80),
    }]
}

fn canvas() -> Canvas {
    Canvas::default()
}

#[test]
fn left_half_scale_on_640x360() {
    let (bbox, fitted) = place(Anchor::Left, 0.5, 40, 80, 640, 360);
    assert_eq!(bbox.center(), (160.0, 180.0));
    assert_eq!(bbox.height, 180.0);
    assert!(!fitted);
}

#[test]
fn every_anchor_matches_the_rule_table() {
    let table = [
        (Anchor::Left, (160.0, 180.0)),
        (Anchor::Right, (480.0, 180.0)),
        (Anchor::Center, (320.0, 180.0)),
        (Anchor::Above, (320.0, 90.0)),
        (Anchor::Below, (320.0, 270.0)),
    ];
    for (anchor, center) in table {
        let (bbox, _) = place(anchor, 0.3, 50, 50, 640, 360);
        assert_eq!(bbox.center(), center, "{anchor:?}");
        assert!(bbox.inside(640, 360));
    }
}

#[test]
fn oversize_boxes_shrink_about_their_center() {
    let (bbox, fitted) = place(Anchor::Above, 1.0, 50, 50, 640, 360);
    assert!(fitted);
    assert_eq!(bbox.center(), (320.0, 90.0));
    assert!(bbox.inside(640, 360));
}

#[test]
fn linked_shot_passes_previous_extreme_through() {
    let prev = Frame::from_fn(64, 36, |x, y| Rgb([x as u8, y as u8, 7]));
    let shot = fixtures::shot(1, Linkage::T);
    let (frame, plan) = compose_first_frame(&shot, &[], None, Some(&prev), &canvas()).unwrap();
    assert_eq!(frame, prev);
    assert_eq!(plan.origin, FrameOrigin::PreviousExtreme);
    let err = compose_first_frame(&shot, &[], None, None, &canvas()).unwrap_err();
    assert_eq!(err, ArtistError::MissingPreviousExtreme { shot: 1 });
}

#[test]
fn flat_canvas_with_one_centered_character() {
    let mut shot = fixtures::shot(0, Linkage::F);
    shot.composition.layout = vec![LayoutSlot {
        character: "Mia".into(),
        anchor: Anchor::Center,
        scale: 0.5,
    }];
    let (frame, plan) = compose_first_frame(&shot, &mia(), None, None, &canvas()).unwrap();
    assert_eq!(plan.base, Base::FlatCanvas);
    assert_eq!(plan.placements[0].bbox.center(), (320.0, 180.0));
    assert_eq!(*frame.get_pixel(0, 0), Rgb([128, 128, 128]));
    assert_eq!(*frame.get_pixel(320, 180), Rgb([250, 20, 20]));
}

#[test]
fn transparent_pixels_keep_the_background() {
    let mut img = sprite(10, 10);
    for x in 0..10 {
        for y in 0..5 {
            img.put_pixel(x, y, Rgba([0, 0, 0, 0]));
        }
    }
    let refs = vec![CharacterRef { name: "Mia".into(), image: img }];
    let mut shot = fixtures::shot(0, Linkage::F);
    shot.composition.layout[0].anchor = Anchor::Center;
    let c = Canvas { width: 100, height: 100, background: [0, 0, 200] };
    let (frame, plan) = compose_first_frame(&shot, &refs, None, None, &c).unwrap();
    let top = plan.placements[0].bbox.y.round() as u32;
    assert_eq!(*frame.get_pixel(50, top + 3), Rgb([0, 0, 200]));
    assert_eq!(*frame.get_pixel(50, 70), Rgb([250, 20, 20]));
}

#[test]
fn scene_reference_is_scaled_to_canvas() {
    let scene = Frame::from_pixel(10, 5, Rgb([0, 160, 0]));
    let mut shot = fixtures::shot(0, Linkage::F);
    shot.composition.layout.clear();
    let (frame, plan) = compose_first_frame(&shot, &[], Some(&scene), None, &canvas()).unwrap();
    assert_eq!(frame.dimensions(), (640, 360));
    assert_eq!(plan.base, Base::SceneReference);
    assert_eq!(*frame.get_pixel(5, 5), Rgb([0, 160, 0]));
}

#[test]
fn missing_reference_is_an_error() {
    let shot = fixtures::shot(0, Linkage::F);
    let err = compose_first_frame(&shot, &[], None, None, &canvas()).unwrap_err();
    assert_eq!(err, ArtistError::MissingCharacterRef { shot: 0, name: "Mia".into() });
}

#[test]
fn compositing_is_deterministic() {
    let shot = fixtures::shot(0, Linkage::F);
    let scene = Frame::from_fn(30, 20, |x, y| Rgb([x as u8 * 8, y as u8 * 12, 90]));
    let a = compose_first_frame(&shot, &mia(), Some(&scene), None, &canvas()).unwrap();
    let b = compose_first_frame(&shot, &mia(), Some(&scene), None, &canvas()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn prompt_golden_for_fixture_shot_zero() {
    let expected = "Scene: forest, watercolor style, with lantern. \
Characters: Mia (person; short black hair; wearing red coat; carrying backpack). \
Action: Mia explores the forest, beat 0; walks forward; mood: curious. \
Camera: medium shot, eye level, Mia at left. \
Relationships: Mia and environment (exploration): Mia peers into the trees. \
Keep as in the first frame: Mia, forest.";
    assert_eq!(compose_prompt(&fixtures::sheet(1), 0), expected);
}

#[test]
fn prompts_differ_only_in_the_action_clause() {
    let a = fixtures::sheet(1);
    let mut b = a.clone();
    b.shots[0].shot.action = "runs back".into();
    let pa = compose_prompt(&a, 0);
    let pb = compose_prompt(&b, 0);
    assert_eq!(pa.replace("walks forward", "runs back"), pb);
    assert_eq!(pa, compose_prompt(&a.clone(), 0));
}

fn sim(scenario: Scenario) -> (ModelClients, Arc<SimBackend>) {
    let sim = Arc::new(SimBackend::new(scenario));
    let mut cfg = BackendConfig::default();
    cfg.i2v.poll_interval_secs = 0.0001;
    cfg.i2v.poll_timeout_secs = 0.0003;
    (ModelClients::new(sim.clone(), cfg), sim)
}

fn first() -> Frame {
    Frame::from_fn(32, 18, |x, y| Rgb([x as u8 * 7, y as u8 * 13, 50]))
}

const PARAMS: VideoParams = VideoParams { frame_count: 8, fps: 16, seed: 5 };

#[test]
fn acquisition_checks_the_anchor_frame() {
    let (c, _) = sim(Scenario::default());
    let mut recorded = Vec::new();
    let traj = acquire_trajectory(&first(), "p", PARAMS, FrameOrigin::Composited, &c, None, |id| {
        recorded.push(id.to_string())
    })
    .unwrap();
    assert_eq!(traj.len(), 8);
    assert_eq!(content_hash(&traj.frames[0]), content_hash(&first()));
    assert_eq!(recorded, vec![traj.source.clone()]);
}

#[test]
fn corrupted_frame_zero_is_rejected() {
    let mut scenario = Scenario::default();
    scenario.i2v.default_job = JobScript { corrupt_first_frame: true, ..JobScript::default() };
    let (c, _) = sim(scenario);
    let err = acquire_trajectory(&first(), "p", PARAMS, FrameOrigin::Composited, &c, None, |_| {}).unwrap_err();
    assert!(matches!(err, ArtistError::AnchorMismatch { .. }));
}

#[test]
fn resume_after_poll_timeout_does_not_resubmit() {
    let mut scenario = Scenario::default();
    scenario.i2v.default_job = JobScript { polls_until_done: 4, ..JobScript::default() };
    let (c, sim) = sim(scenario);
    let mut job = None;
    let err = acquire_trajectory(&first(), "p", PARAMS, FrameOrigin::Composited, &c, None, |id| {
        job = Some(id.to_string())
    })
    .unwrap_err();
    assert!(matches!(err, ArtistError::Backend(BackendError::PollTimeout { .. })));
    let job = job.unwrap();
    let traj = acquire_trajectory(&first(), "p", PARAMS, FrameOrigin::Composited, &c, Some(&job), |_| {
        panic!("must not resubmit")
    })
    .unwrap();
    assert_eq!(traj.source, job);
    assert_eq!(sim.count(Endpoint::I2vSubmit), 1);
}
