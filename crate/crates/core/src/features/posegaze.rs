//! Head-pose and eye-gaze tracks and their per-window variability vector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureKind, Result, SegmentFeature, SegmentWindow};

/// Length of the fused head-pose / eye-gaze vector.
pub const POSE_GAZE_DIM: usize = 9;

/// One tracked frame: head translation (mm), head rotation (radians) and
/// the unit gaze direction of each eye.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGazeRecord {
    pub frame: usize,
    pub translation: [f64; 3],
    /// Roll, yaw, pitch.
    pub rotation: [f64; 3],
    pub gaze_left: [f64; 3],
    pub gaze_right: [f64; 3],
}

/// OpenFace column layout.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    frame: usize,
    #[serde(rename = "pose_Tx")]
    tx: f64,
    #[serde(rename = "pose_Ty")]
    ty: f64,
    #[serde(rename = "pose_Tz")]
    tz: f64,
    #[serde(rename = "pose_Rx")]
    rx: f64,
    #[serde(rename = "pose_Ry")]
    ry: f64,
    #[serde(rename = "pose_Rz")]
    rz: f64,
    gaze_0_x: f64,
    gaze_0_y: f64,
    gaze_0_z: f64,
    gaze_1_x: f64,
    gaze_1_y: f64,
    gaze_1_z: f64,
}

impl From<&CsvRow> for PoseGazeRecord {
    fn from(r: &CsvRow) -> Self {
        PoseGazeRecord {
            frame: r.frame,
            translation: [r.tx, r.ty, r.tz],
            rotation: [r.rx, r.ry, r.rz],
            gaze_left: [r.gaze_0_x, r.gaze_0_y, r.gaze_0_z],
            gaze_right: [r.gaze_1_x, r.gaze_1_y, r.gaze_1_z],
        }
    }
}

impl From<&PoseGazeRecord> for CsvRow {
    fn from(r: &PoseGazeRecord) -> Self {
        CsvRow {
            frame: r.frame,
            tx: r.translation[0],
            ty: r.translation[1],
            tz: r.translation[2],
            rx: r.rotation[0],
            ry: r.rotation[1],
            rz: r.rotation[2],
            gaze_0_x: r.gaze_left[0],
            gaze_0_y: r.gaze_left[1],
            gaze_0_z: r.gaze_left[2],
            gaze_1_x: r.gaze_right[0],
            gaze_1_y: r.gaze_right[1],
            gaze_1_z: r.gaze_right[2],
        }
    }
}

/// Per-frame pose/gaze records of one video, in frame order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseGazeTrack {
    pub records: Vec<PoseGazeRecord>,
}

impl PoseGazeTrack {
    pub fn new(records: Vec<PoseGazeRecord>) -> Result<Self> {
        for r in &records {
            let finite = r
                .translation
                .iter()
                .chain(&r.rotation)
                .chain(&r.gaze_left)
                .chain(&r.gaze_right)
                .all(|v| v.is_finite());
            if !finite {
                return Err(FeatureError::InvalidArgument(format!(
                    "non-finite value in frame {}",
                    r.frame
                )));
            }
        }
        Ok(PoseGazeTrack { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps every `step`-th record starting with the first, mirroring
    /// [`super::subsample`] on the aligned frames.
    pub fn subsample(&self, step: usize) -> PoseGazeTrack {
        PoseGazeTrack {
            records: self.records.iter().step_by(step.max(1)).copied().collect(),
        }
    }

    /// Errors unless the track has one record per frame.
    pub fn check_aligned(&self, frame_count: usize) -> Result<()> {
        if self.len() != frame_count {
            return Err(FeatureError::InvalidArgument(format!(
                "track has {} records for {frame_count} frames",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Reads an OpenFace-style CSV. Extra columns are ignored and fields are
/// whitespace-trimmed.
pub fn read_pose_gaze_csv(path: &Path) -> Result<PoseGazeTrack> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        records.push(PoseGazeRecord::from(&row));
    }
    PoseGazeTrack::new(records)
}

pub fn write_pose_gaze_csv(path: &Path, track: &PoseGazeTrack) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in &track.records {
        writer
            .serialize(CsvRow::from(r))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> FeatureError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    FeatureError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Two-pass population std on values shifted by the first one, so that a
/// constant channel gives exactly zero.
fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return 0.0 };
    let n = values.clone().count() as f64;
    let mean = values.clone().map(|v| v - first).sum::<f64>() / n;
    (values.map(|v| (v - first - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Population standard deviations over the window's frames of
/// `[head x, y, z, roll, yaw, pitch, gaze x, y, z]`, where each gaze
/// component is first averaged over the two eyes. A one-frame window gives
/// all zeros.
pub fn pose_gaze_feature(track: &PoseGazeTrack, window: SegmentWindow) -> Result<SegmentFeature> {
    window.check_within(track.len())?;
    let records = &track.records[window.start_index..window.end()];
    let mut vector = Vec::with_capacity(POSE_GAZE_DIM);
    for axis in 0..3 {
        vector.push(population_std(records.iter().map(move |r| r.translation[axis])));
    }
    for axis in 0..3 {
        vector.push(population_std(records.iter().map(move |r| r.rotation[axis])));
    }
    for axis in 0..3 {
        vector.push(population_std(
            records
                .iter()
                .map(move |r| 0.5 * (r.gaze_left[axis] + r.gaze_right[axis])),
        ));
    }
    SegmentFeature::new(vector, FeatureKind::PoseGaze, window)
}
