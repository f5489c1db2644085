//! Protocol-level contract checks runnable against any [`Transport`]: the
//! in-process sim, `storyboard sim-serve` over HTTP, or a real gateway.
//!
//! Checks assert shapes, status codes and determinism, never payload values.

use std::time::Duration;

use image::Rgb;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::frames;
use super::transport::{Transport, WireRequest, WireResponse};
use super::wire::*;
use crate::imaging::{self, sha256_hex, Frame};
use crate::prompts::{render, REVIEWER_CRITIC};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

#[derive(Debug, Clone, Copy)]
pub struct ContractOptions {
    pub poll_interval: Duration,
    pub max_polls: u32,
    pub frame_count: u32,
}

impl Default for ContractOptions {
    fn default() -> Self {
        ContractOptions {
            poll_interval: Duration::from_millis(10),
            max_polls: 200,
            frame_count: 5,
        }
    }
}

type Check = fn(&dyn Transport, &ContractOptions) -> Result<(), String>;

const CHECKS: &[(&str, Check)] = &[
    ("chat_returns_completion", chat_returns_completion),
    ("embed_is_deterministic", embed_is_deterministic),
    ("i2v_lifecycle_keeps_first_frame", i2v_lifecycle),
    ("i2v_unknown_job_is_404", unknown_job),
    ("track_shape", track_shape),
    ("aesthetic_range_and_determinism", aesthetic),
    ("malformed_body_is_400", malformed_body),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check; one result per check in a fixed order.
pub fn run_contract(transport: &dyn Transport, options: &ContractOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| CheckResult {
            name,
            outcome: check(transport, options),
        })
        .collect()
}

fn send(t: &dyn Transport, endpoint: Endpoint, body: &Value) -> Result<WireResponse, String> {
    t.send(&WireRequest {
        endpoint,
        body: serde_json::to_vec(body).expect("json"),
    })
    .map_err(|e| e.to_string())
}

fn ok_json<T: DeserializeOwned>(resp: WireResponse) -> Result<T, String> {
    if resp.status != 200 {
        return Err(format!("status {}: {}", resp.status, String::from_utf8_lossy(&resp.body)));
    }
    if !resp.content_type.starts_with(CONTENT_JSON) {
        return Err(format!("content type {:?}", resp.content_type));
    }
    serde_json::from_slice(&resp.body).map_err(|e| format!("schema: {e}"))
}

fn expect_error(resp: &WireResponse, status: u16) -> Result<(), String> {
    if resp.status != status {
        return Err(format!("expected status {status}, got {}", resp.status));
    }
    serde_json::from_slice::<ErrorEnvelope>(&resp.body)
        .map(|_| ())
        .map_err(|e| format!("error envelope: {e}"))
}

fn probe_frame(shade: u8) -> Frame {
    let mut f = Frame::from_pixel(48, 27, Rgb([shade, 100, 140]));
    for x in 10..20 {
        for y in 8..16 {
            f.put_pixel(x, y, Rgb([240, 220, 30]));
        }
    }
    f
}

fn chat_returns_completion(t: &dyn Transport, _: &ContractOptions) -> Result<(), String> {
    let frame = imaging::to_base64_png(&probe_frame(60));
    let body = json!({
        "model": "contract",
        "messages": [
            {"role": "system", "content": [{"type": "text", "text": render(REVIEWER_CRITIC, &[("SHOT", "0")])}]},
            {"role": "user", "content": [{"type": "text", "text": "Rate this frame."}, {"type": "image", "image": frame}]}
        ]
    });
    let resp: ChatResponse = ok_json(send(t, Endpoint::Chat, &body)?)?;
    match resp.choices.first().and_then(|c| c.message.content.as_deref()) {
        Some(text) if !text.trim().is_empty() => Ok(()),
        _ => Err("no completion text in choices[0].message.content".into()),
    }
}

fn embed_is_deterministic(t: &dyn Transport, _: &ContractOptions) -> Result<(), String> {
    let body = json!({"model": "contract", "input": ["a lantern in the forest", "a lantern in the forest", "x"]});
    let resp: EmbedResponse = ok_json(send(t, Endpoint::Embed, &body)?)?;
    if resp.data.len() != 3 {
        return Err(format!("{} vectors for 3 inputs", resp.data.len()));
    }
    let dim = resp.data[0].embedding.len();
    if dim == 0 || resp.data.iter().any(|d| d.embedding.len() != dim) {
        return Err("inconsistent or empty dimension".into());
    }
    if resp.data[0].embedding != resp.data[1].embedding {
        return Err("identical inputs produced different vectors".into());
    }
    let empty = send(t, Endpoint::Embed, &json!({"model": "contract", "input": []}))?;
    expect_error(&empty, 400)
}

fn i2v_lifecycle(t: &dyn Transport, o: &ContractOptions) -> Result<(), String> {
    let first = probe_frame(80);
    let body = json!({
        "image": imaging::to_base64_png(&first),
        "prompt": "the yellow block drifts right",
        "frame_count": o.frame_count,
        "fps": 8,
        "seed": 1
    });
    let submitted: SubmitResponse = ok_json(send(t, Endpoint::I2vSubmit, &body)?)?;
    let job = json!({"job_id": submitted.job_id});
    let mut done = false;
    for _ in 0..o.max_polls {
        let poll: PollResponse = ok_json(send(t, Endpoint::I2vPoll, &job)?)?;
        match poll.status {
            JobStatus::Done => {
                done = true;
                break;
            }
            JobStatus::Failed => return Err("probe job failed".into()),
            JobStatus::Queued | JobStatus::Running => std::thread::sleep(o.poll_interval),
        }
    }
    if !done {
        return Err(format!("job not done after {} polls", o.max_polls));
    }
    let resp = send(t, Endpoint::I2vFetch, &job)?;
    if resp.status != 200 {
        return Err(format!("fetch status {}", resp.status));
    }
    if let Some(expected) = &resp.content_sha256 {
        if !expected.eq_ignore_ascii_case(&sha256_hex(&resp.body)) {
            return Err("checksum header does not match body".into());
        }
    }
    if !resp.content_type.starts_with(CONTENT_ZIP) {
        // MP4 needs a decoder the suite does not assume; the lifecycle passed.
        return if resp.content_type.starts_with(CONTENT_MP4) {
            Ok(())
        } else {
            Err(format!("fetch content type {:?}", resp.content_type))
        };
    }
    let frames = frames::unpack_zip(&resp.body).map_err(|e| e.to_string())?;
    if frames.len() != o.frame_count as usize {
        return Err(format!("{} frames, asked for {}", frames.len(), o.frame_count));
    }
    if frames[0] != first {
        return Err("frame 0 differs from the submitted first frame".into());
    }
    Ok(())
}

fn unknown_job(t: &dyn Transport, _: &ContractOptions) -> Result<(), String> {
    let job = json!({"job_id": "no-such-job"});
    expect_error(&send(t, Endpoint::I2vPoll, &job)?, 404)?;
    expect_error(&send(t, Endpoint::I2vFetch, &job)?, 404)
}

fn track_shape(t: &dyn Transport, _: &ContractOptions) -> Result<(), String> {
    let frames: Vec<String> = (0..3).map(|i| imaging::to_base64_png(&probe_frame(50 + i * 10))).collect();
    let body = json!({"reference": frames[0], "frames": frames});
    let resp: TrackResponse = ok_json(send(t, Endpoint::Track, &body)?)?;
    for track in &resp.tracks {
        if track.points.len() != 3 {
            return Err(format!("track {} has {} points for 3 frames", track.id, track.points.len()));
        }
        if track.points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(format!("track {} has non-finite coordinates", track.id));
        }
    }
    let short = json!({"reference": frames[0], "frames": [frames[0]]});
    expect_error(&send(t, Endpoint::Track, &short)?, 400)
}

fn aesthetic(t: &dyn Transport, _: &ContractOptions) -> Result<(), String> {
    let body = json!({"frame": imaging::to_base64_png(&probe_frame(120))});
    let a: AestheticResponse = ok_json(send(t, Endpoint::Aesthetic, &body)?)?;
    if !(a.score.is_finite() && (0.0..=10.0).contains(&a.score)) {
        return Err(format!("score {} outside [0, 10]", a.score));
    }
    let bad = json!({"frame": "not base64 png"});
    expect_error(&send(t, Endpoint::Aesthetic, &bad)?, 400)
}

fn malformed_body(t: &dyn Transport, _: &ContractOptions) -> Result<(), String> {
    for endpoint in Endpoint::ALL {
        let resp = t
            .send(&WireRequest {
                endpoint,
                body: b"{not json".to_vec(),
            })
            .map_err(|e| e.to_string())?;
        expect_error(&resp, 400).map_err(|e| format!("{endpoint}: {e}"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::sim::{Scenario, SimBackend};

    #[test]
    fn sim_passes_every_check() {
        let sim = SimBackend::new(Scenario::default());
        for r in run_contract(&sim, &ContractOptions::default()) {
            assert_eq!(r.outcome, Ok(()), "{}", r.name);
        }
    }

    #[test]
    fn broken_backend_fails_checks() {
        struct AlwaysTeapot;
        impl Transport for AlwaysTeapot {
            fn send(&self, _: &WireRequest) -> Result<WireResponse, crate::backend::TransportError> {
                Ok(WireResponse::json(418, &json!({"nope": true})))
            }
        }
        let results = run_contract(&AlwaysTeapot, &ContractOptions::default());
        assert_eq!(results.len(), check_names().len());
        assert!(results.iter().all(|r| r.outcome.is_err()));
    }
}
