//! Frame archives: numbered binary PGM face crops plus a JSON manifest.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use super::{FeatureError, FrameSequence, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub subject_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
}

impl VideoManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| FeatureError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| FeatureError::Parse {
            path,
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|source| FeatureError::Io { path, source })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureError + '_ {
    move |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sorted `.pgm` files of an archive directory.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads the frames of `dir` in filename order and checks them against the
/// manifest.
pub fn load_frame_archive(dir: &Path) -> Result<FrameSequence> {
    let manifest = VideoManifest::read(dir)?;
    let files = frame_files(dir)?;
    if files.len() != manifest.frame_count {
        return Err(FeatureError::InvalidArgument(format!(
            "{}: manifest lists {} frames, found {}",
            dir.display(),
            manifest.frame_count,
            files.len()
        )));
    }
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let img = image::ImageReader::open(path)
            .map_err(io_err(path))?
            .with_guessed_format()
            .map_err(io_err(path))?
            .decode()
            .map_err(|source| FeatureError::Image {
                path: path.clone(),
                source,
            })?
            .into_luma8();
        if img.dimensions() != (manifest.width, manifest.height) {
            return Err(FeatureError::InvalidArgument(format!(
                "{}: frame is {:?}, manifest says {}x{}",
                path.display(),
                img.dimensions(),
                manifest.width,
                manifest.height
            )));
        }
        frames.push(img);
    }
    FrameSequence::new(frames, manifest.fps, manifest.subject_id, manifest.video_id)
}

/// Writes `seq` as `000000.pgm, 000001.pgm, ...` plus the manifest.
pub fn write_frame_archive(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("{i:06}.pgm"));
        let file = File::create(&path).map_err(io_err(&path))?;
        PnmEncoder::new(BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(frame.as_raw(), frame.width(), frame.height(), ExtendedColorType::L8)
            .map_err(|source| FeatureError::Image {
                path: path.clone(),
                source,
            })?;
    }
    VideoManifest {
        video_id: seq.video_id.clone(),
        subject_id: seq.subject_id.clone(),
        fps: seq.fps(),
        width: seq.width(),
        height: seq.height(),
        frame_count: seq.len(),
    }
    .write(dir)
}
