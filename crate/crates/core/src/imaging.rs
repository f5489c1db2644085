//! Raster helpers: canonical PNG encoding, content hashes and base64 transport.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::{ImageFormat, RgbImage, RgbaImage};
use sha2::{Digest, Sha256};

pub type Frame = RgbImage;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("base64 decode failed: {0}")]
    Base64(#[from] base64::DecodeError),
}

/// PNG bytes for `frame`. The encoder settings are fixed, so equal pixels
/// always give equal bytes (and therefore equal content hashes).
pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    frame
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<Frame, ImageError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| ImageError::Decode(e.to_string()))
}

pub fn decode_png_rgba(bytes: &[u8]) -> Result<RgbaImage, ImageError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_rgba8())
        .map_err(|e| ImageError::Decode(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a frame: SHA-256 of its canonical PNG encoding.
pub fn content_hash(frame: &Frame) -> String {
    sha256_hex(&encode_png(frame))
}

pub fn to_base64_png(frame: &Frame) -> String {
    BASE64.encode(encode_png(frame))
}

pub fn from_base64_png(data: &str) -> Result<Frame, ImageError> {
    decode_png(&BASE64.decode(data)?)
}

pub fn rgba_to_base64_png(img: &RgbaImage) -> String {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    BASE64.encode(out.into_inner())
}
