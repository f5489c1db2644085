//! Typed clients for the five model backends and the deterministic simulation
//! backend that speaks the same wire protocol.

pub mod client;
pub mod config;
pub mod contract;
pub mod frames;
pub mod sim;
pub mod transport;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::imaging::Frame;
use crate::scalar::Scalar;

pub use client::{BackendError, ModelClients, VideoParams};
pub use config::{BackendConfig, BackendKind, EndpointConfig, I2vConfig};
pub use transport::{HttpTransport, Transport, TransportError, WireRequest, WireResponse};

/// Where a trajectory's first frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrigin {
    Composited,
    PreviousExtreme,
    Provided,
}

/// Decoded frames of one I2V result.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub fps: u32,
    /// Backend job id, or a local path for ingested trajectories.
    pub source: String,
    pub first_frame_origin: FrameOrigin,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> Option<(u32, u32)> {
        self.frames.first().map(|f| f.dimensions())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingOf<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> EmbeddingOf<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint<T> {
    pub x: T,
    pub y: T,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track<T> {
    pub id: u32,
    pub points: Vec<TrackPoint<T>>,
}

/// Keypoint tracks over a trajectory: one point per track per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSetOf<T> {
    pub frame_count: usize,
    pub tracks: Vec<Track<T>>,
    /// Set when the tracker found no correspondence with the reference.
    #[serde(default)]
    pub no_correspondence: bool,
}

impl<T: Scalar> TrackSetOf<T> {
    pub fn empty(frame_count: usize) -> Self {
        TrackSetOf {
            frame_count,
            tracks: Vec::new(),
            no_correspondence: true,
        }
    }

    /// Checks that every track spans `frame_count` frames with finite coordinates.
    pub fn check(&self) -> Result<(), String> {
        for track in &self.tracks {
            if track.points.len() != self.frame_count {
                return Err(format!(
                    "track {} has {} points, expected {}",
                    track.id,
                    track.points.len(),
                    self.frame_count
                ));
            }
            if let Some(t) = track
                .points
                .iter()
                .position(|p| !(p.x.is_finite() && p.y.is_finite()))
            {
                return Err(format!("track {} has a non-finite point at frame {t}", track.id));
            }
        }
        Ok(())
    }

    /// Applies `f` to every coordinate pair.
    pub fn map_points(&self, f: impl Fn(T, T) -> (T, T)) -> Self {
        TrackSetOf {
            frame_count: self.frame_count,
            no_correspondence: self.no_correspondence,
            tracks: self
                .tracks
                .iter()
                .map(|tr| Track {
                    id: tr.id,
                    points: tr
                        .points
                        .iter()
                        .map(|p| {
                            let (x, y) = f(p.x, p.y);
                            TrackPoint { x, y, visible: p.visible }
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}
