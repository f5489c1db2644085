//! Storyboard generation engine.
//!
//! A story is turned into a five-dimension dope sheet, each shot is rendered
//! as an image-to-video trajectory from a composed first frame, the
//! trajectory's tail is captioned back and compared dimension by dimension
//! against the script (refining failing dimensions for a bounded number of
//! rounds), and finally the most expressive frame is picked using motion,
//! aesthetic and rubric scores.

pub mod artist;
pub mod backend;
pub mod consistency;
pub mod director;
pub mod dopesheet;
pub mod extremes;
pub mod imaging;
pub mod pipeline;
pub mod prompts;
pub mod report;
pub mod scalar;

pub use scalar::Scalar;

pub type Embedding = backend::EmbeddingOf<f64>;
pub type TrackSet = backend::TrackSetOf<f64>;
