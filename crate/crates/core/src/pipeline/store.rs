//! Content-addressed PNG store and atomic file writes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use image::RgbaImage;

use crate::imaging::{self, Frame};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("store entry {0} is missing")]
    Missing(String),
    #[error("store entry {key} is damaged: {reason}")]
    Damaged { key: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

/// Append-only directory of `<sha256>.png` files.
#[derive(Debug, Clone)]
pub struct FrameStore {
    root: PathBuf,
}

impl FrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FrameStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.root.join(format!("{key}.png"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path(key).is_file()
    }

    fn put_bytes(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let key = imaging::sha256_hex(bytes);
        let path = self.path(&key);
        if !path.is_file() {
            write_atomic(&path, bytes)?;
        }
        Ok(key)
    }

    fn get_bytes(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::Missing(key.to_string())),
            Err(e) => return Err(StoreError::Io { path, source: e }),
        };
        if imaging::sha256_hex(&bytes) != key {
            return Err(StoreError::Damaged { key: key.to_string(), reason: "hash mismatch".into() });
        }
        Ok(bytes)
    }

    /// Stores a frame; the key is its content hash.
    pub fn put(&self, frame: &Frame) -> Result<String, StoreError> {
        self.put_bytes(&imaging::encode_png(frame))
    }

    pub fn get(&self, key: &str) -> Result<Frame, StoreError> {
        imaging::decode_png(&self.get_bytes(key)?)
            .map_err(|e| StoreError::Damaged { key: key.to_string(), reason: e.to_string() })
    }

    pub fn put_rgba(&self, img: &RgbaImage) -> Result<String, StoreError> {
        let mut out = io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding cannot fail");
        self.put_bytes(&out.into_inner())
    }

    pub fn get_rgba(&self, key: &str) -> Result<RgbaImage, StoreError> {
        imaging::decode_png_rgba(&self.get_bytes(key)?)
            .map_err(|e| StoreError::Damaged { key: key.to_string(), reason: e.to_string() })
    }
}
