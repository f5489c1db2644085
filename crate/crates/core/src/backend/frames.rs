//! Frame containers for `i2v/fetch` payloads.

use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::process::Command;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::imaging::{decode_png, encode_png, Frame};

#[derive(Debug, thiserror::Error)]
pub enum FramesError {
    #[error("zip archive: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame {name}: {message}")]
    Frame { name: String, message: String },
    #[error("archive holds no PNG frames")]
    Empty,
    #[error("no decoder command configured for MP4 payloads")]
    NoDecoder,
    #[error("decoder command failed: {0}")]
    Decoder(String),
}

/// ZIP with one PNG per frame, named `frame_00000.png`, `frame_00001.png`, ...
///
/// Entries are stored with a fixed timestamp so the archive bytes depend only
/// on the frames.
pub fn pack_zip(frames: &[Frame]) -> Vec<u8> {
    let mut writer = ZipWriter::new(Cursor::new(Vec::new()));
    let options = SimpleFileOptions::default().compression_method(CompressionMethod::Stored);
    for (i, frame) in frames.iter().enumerate() {
        writer
            .start_file(format!("frame_{i:05}.png"), options)
            .expect("in-memory zip entry");
        writer
            .write_all(&encode_png(frame))
            .expect("in-memory zip write");
    }
    writer.finish().expect("in-memory zip finish").into_inner()
}

/// Reads every `*.png` entry, ordered by entry name.
pub fn unpack_zip(bytes: &[u8]) -> Result<Vec<Frame>, FramesError> {
    let mut archive = ZipArchive::new(Cursor::new(bytes))?;
    let mut names: Vec<String> = archive
        .file_names()
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .map(str::to_string)
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(FramesError::Empty);
    }
    names
        .into_iter()
        .map(|name| {
            let mut buf = Vec::new();
            archive.by_name(&name)?.read_to_end(&mut buf)?;
            decode_png(&buf).map_err(|e| FramesError::Frame {
                name,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Decodes an MP4 payload by running `command` with `{input}` and `{outdir}`
/// substituted, then loading the PNGs it wrote in file-name order.
pub fn decode_mp4(bytes: &[u8], command: Option<&[String]>) -> Result<Vec<Frame>, FramesError> {
    let command = command.filter(|c| !c.is_empty()).ok_or(FramesError::NoDecoder)?;
    let work = tempfile::tempdir()?;
    let input = work.path().join("input.mp4");
    std::fs::write(&input, bytes)?;
    let outdir = work.path().join("frames");
    std::fs::create_dir(&outdir)?;

    let substitute = |arg: &String| {
        arg.replace("{input}", &input.to_string_lossy())
            .replace("{outdir}", &outdir.to_string_lossy())
    };
    let output = Command::new(&command[0])
        .args(command[1..].iter().map(substitute))
        .output()?;
    if !output.status.success() {
        return Err(FramesError::Decoder(format!(
            "{} exited with {}: {}",
            command[0],
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    read_png_dir(&outdir)
}

fn read_png_dir(dir: &Path) -> Result<Vec<Frame>, FramesError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(FramesError::Empty);
    }
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p)?;
            decode_png(&bytes).map_err(|e| FramesError::Frame {
                name: p.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}
