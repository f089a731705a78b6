//! Per-segment descriptors from face-crop frames and pose/gaze tracks.
//!
//! Videos are subsampled to a target frame rate, cut into overlapping
//! windows of `k` frames moved by `l` frames, and each window becomes one
//! [`SegmentFeature`]: either an LBP-TOP histogram ([`lbp_top`]) or the
//! 9-dimensional head-pose / eye-gaze variability vector
//! ([`pose_gaze_feature`]).

use std::path::PathBuf;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod frames;
mod lbp;
mod posegaze;

pub use frames::{load_frame_archive, write_frame_archive, VideoManifest, MANIFEST_FILE};
pub use lbp::{lbp_code, lbp_top, uniform_bin, LbpTopConfig, LbpTopHistogram, XySampling};
pub use lbp::{LBP_TOP_LEN, UNIFORM_BINS};
pub use posegaze::{
    pose_gaze_feature, read_pose_gaze_csv, write_pose_gaze_csv, PoseGazeRecord, PoseGazeTrack,
    POSE_GAZE_DIM,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("video too short: {frames} frames for a window of {window}")]
    TooShortVideo { frames: usize, window: usize },
    #[error("window of {length} frames at {width}x{height} has no interior pixel on some plane")]
    DegenerateWindow {
        length: usize,
        width: u32,
        height: u32,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

/// Which descriptor a feature vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    LbpTop,
    PoseGaze,
    /// Generated vectors of any dimension.
    Synthetic,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::LbpTop => "lbptop",
            FeatureKind::PoseGaze => "posegaze",
            FeatureKind::Synthetic => "synthetic",
        }
    }

    /// Whether `dim` is a valid vector length for this kind. LBP-TOP
    /// vectors are 177 values per spatial block.
    pub fn accepts_dim(self, dim: usize) -> bool {
        match self {
            FeatureKind::LbpTop => dim > 0 && dim % LBP_TOP_LEN == 0,
            FeatureKind::PoseGaze => dim == POSE_GAZE_DIM,
            FeatureKind::Synthetic => dim > 0,
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbptop" => Ok(FeatureKind::LbpTop),
            "posegaze" => Ok(FeatureKind::PoseGaze),
            "synthetic" => Ok(FeatureKind::Synthetic),
            other => Err(FeatureError::InvalidArgument(format!(
                "unknown feature kind {other:?}"
            ))),
        }
    }
}

/// Ordered grayscale face crops of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<GrayImage>,
    fps: f64,
    pub subject_id: String,
    pub video_id: String,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<GrayImage>,
        fps: f64,
        subject_id: impl Into<String>,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(FeatureError::InvalidArgument("empty frame sequence".into()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(FeatureError::InvalidArgument(format!("fps must be > 0, got {fps}")));
        }
        let dims = frames[0].dimensions();
        if let Some(i) = frames.iter().position(|f| f.dimensions() != dims) {
            return Err(FeatureError::InvalidArgument(format!(
                "frame {i} is {:?}, expected {dims:?}",
                frames[i].dimensions()
            )));
        }
        Ok(FrameSequence {
            frames,
            fps,
            subject_id: subject_id.into(),
            video_id: video_id.into(),
        })
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width()
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height()
    }
}

/// Frame step that brings `source_fps` down to `target_fps`:
/// `round(source / target)`.
pub fn subsample_step(source_fps: f64, target_fps: f64) -> Result<usize> {
    if !(source_fps > 0.0 && target_fps > 0.0) {
        return Err(FeatureError::InvalidArgument(format!(
            "frame rates must be positive, got source {source_fps} target {target_fps}"
        )));
    }
    if target_fps > source_fps {
        return Err(FeatureError::InvalidArgument(format!(
            "target rate {target_fps} exceeds source rate {source_fps}"
        )));
    }
    Ok(((source_fps / target_fps).round() as usize).max(1))
}

/// Keeps every `step`-th frame starting with the first, where
/// `step = round(seq.fps / target_fps)`.
pub fn subsample(seq: &FrameSequence, target_fps: f64) -> Result<FrameSequence> {
    let step = subsample_step(seq.fps, target_fps)?;
    Ok(FrameSequence {
        frames: seq.frames.iter().step_by(step).cloned().collect(),
        fps: seq.fps / step as f64,
        subject_id: seq.subject_id.clone(),
        video_id: seq.video_id.clone(),
    })
}

/// A window of `length` consecutive frames of a sampled sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentWindow {
    pub start_index: usize,
    pub length: usize,
    pub stride: usize,
}

impl SegmentWindow {
    pub fn end(&self) -> usize {
        self.start_index + self.length
    }

    fn check_within(&self, frames: usize) -> Result<()> {
        if self.length == 0 || self.end() > frames {
            return Err(FeatureError::InvalidArgument(format!(
                "window [{}, {}) outside {frames} frames",
                self.start_index,
                self.end()
            )));
        }
        Ok(())
    }
}

/// Sliding windows of `k` frames moved by `l` frames over `frame_count`
/// frames: starts `0, l, 2l, ...` while `start + k <= frame_count`.
pub fn segment(frame_count: usize, k: usize, l: usize) -> Result<Vec<SegmentWindow>> {
    if k < 2 {
        return Err(FeatureError::InvalidArgument(format!("window length must be >= 2, got {k}")));
    }
    if l == 0 {
        return Err(FeatureError::InvalidArgument("stride must be >= 1".into()));
    }
    if frame_count < k {
        return Err(FeatureError::TooShortVideo {
            frames: frame_count,
            window: k,
        });
    }
    Ok((0..=frame_count - k)
        .step_by(l)
        .map(|start_index| SegmentWindow {
            start_index,
            length: k,
            stride: l,
        })
        .collect())
}

/// One window's descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeature {
    pub vector: Vec<f64>,
    pub kind: FeatureKind,
    pub window: SegmentWindow,
}

impl SegmentFeature {
    pub fn new(vector: Vec<f64>, kind: FeatureKind, window: SegmentWindow) -> Result<Self> {
        if !kind.accepts_dim(vector.len()) {
            return Err(FeatureError::InvalidArgument(format!(
                "{kind} vector cannot have dimension {}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidArgument("non-finite feature value".into()));
        }
        Ok(SegmentFeature {
            vector,
            kind,
            window,
        })
    }
}
