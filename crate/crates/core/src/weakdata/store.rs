//! On-disk dataset layout.
//!
//! Every video's `M x D` instance matrix lives in its own `.emil` file: a
//! 16-byte header (`b"EMIL"`, then version, `M` and `D` as little-endian
//! `u32`) followed by `M * D` little-endian `f32` values in row-major order.
//! A JSON index lists the videos with paths relative to the index file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Bag, DataError, Dataset, PlantedIntensities, Result};
use crate::features::FeatureKind;

pub const MAGIC: &[u8; 4] = b"EMIL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const INDEX_FILE: &str = "index.json";
pub const FEATURE_DIR: &str = "features";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes one instance matrix. Values are narrowed to `f32`.
pub fn write_features(path: &Path, instances: &Array2<f64>) -> Result<()> {
    let (m, d) = instances.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m * d);
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, m as u32, d as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in instances.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(io_err(path))
}

/// Reads the `(M, D)` header of a feature file.
pub fn read_header(path: &Path) -> Result<(usize, usize)> {
    let mut head = [0u8; HEADER_LEN];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(io_err(path))?;
    parse_header(path, &head)
}

fn parse_header(path: &Path, head: &[u8]) -> Result<(usize, usize)> {
    if head.len() < HEADER_LEN || &head[..4] != MAGIC {
        return Err(format_err(path, "not an EMIL feature file"));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(format_err(path, format!("unsupported version {}", word(4))));
    }
    Ok((word(8) as usize, word(12) as usize))
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let (m, d) = parse_header(path, &bytes)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * m * d {
        return Err(format_err(
            path,
            format!("expected {} payload bytes for {m}x{d}, found {}", 4 * m * d, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "non-finite feature value"));
    }
    Ok(Array2::from_shape_vec((m, d), values).expect("length checked"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub video_id: String,
    pub subject_id: String,
    pub label: u8,
    pub feature_kind: FeatureKind,
    /// Relative to the directory holding the index.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub feature_kind: FeatureKind,
    pub instances_per_bag: usize,
    pub dim: usize,
    pub videos: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let index: DatasetIndex = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| format_err(path, e.to_string()))?;
        if index.videos.is_empty() {
            return Err(format_err(path, "index lists no videos"));
        }
        if let Some(e) = index.videos.iter().find(|e| e.feature_kind != index.feature_kind) {
            return Err(format_err(
                path,
                format!("{} is {}, index is {}", e.video_id, e.feature_kind, index.feature_kind),
            ));
        }
        Ok(index)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| format_err(path, e.to_string()))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
    }

    /// Subject of every listed video, in index order.
    pub fn subjects(&self) -> Vec<&str> {
        self.videos.iter().map(|e| e.subject_id.as_str()).collect()
    }
}

/// Writes `data` under `dir` as `index.json` plus `features/<video>.emil`
/// and returns the index path.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<PathBuf> {
    let features = dir.join(FEATURE_DIR);
    std::fs::create_dir_all(&features).map_err(io_err(&features))?;
    let mut videos = Vec::with_capacity(data.len());
    for bag in data.bags() {
        let rel = Path::new(FEATURE_DIR).join(format!("{}.emil", bag.video_id));
        write_features(&dir.join(&rel), &bag.instances)?;
        videos.push(IndexEntry {
            video_id: bag.video_id.clone(),
            subject_id: bag.subject_id.clone(),
            label: bag.label,
            feature_kind: data.feature_kind(),
            path: rel,
        });
    }
    let index = DatasetIndex {
        feature_kind: data.feature_kind(),
        instances_per_bag: data.instances_per_bag(),
        dim: data.dim(),
        videos,
    };
    let path = dir.join(INDEX_FILE);
    index.write(&path)?;
    Ok(path)
}

/// Loads the videos of the index at `index_path` for which `keep` holds.
/// Feature files of skipped videos are never opened.
pub fn load_dataset_where(
    index_path: &Path,
    mut keep: impl FnMut(&IndexEntry) -> bool,
) -> Result<Dataset> {
    let index = DatasetIndex::read(index_path)?;
    let base = index_path.parent().unwrap_or(Path::new("."));
    let mut bags = Vec::new();
    for entry in index.videos.iter().filter(|e| keep(e)) {
        let path = base.join(&entry.path);
        let x = read_features(&path)?;
        if x.dim() != (index.instances_per_bag, index.dim) {
            return Err(format_err(
                &path,
                format!(
                    "matrix is {:?}, index declares {}x{}",
                    x.dim(),
                    index.instances_per_bag,
                    index.dim
                ),
            ));
        }
        bags.push(Bag::new(&entry.video_id, &entry.subject_id, x, entry.label)?);
    }
    if bags.is_empty() {
        return Err(format_err(index_path, "no videos selected"));
    }
    Dataset::new(bags, index.feature_kind)
}

pub fn load_dataset(index_path: &Path) -> Result<Dataset> {
    load_dataset_where(index_path, |_| true)
}

#[derive(Debug, Serialize, Deserialize)]
struct PlantedRow {
    video_id: String,
    instance_index: usize,
    planted_intensity: f64,
}

pub fn write_planted_csv(path: &Path, planted: &PlantedIntensities) -> Result<()> {
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (id, values) in planted.video_ids.iter().zip(&planted.values) {
        for (j, &v) in values.iter().enumerate() {
            w.serialize(PlantedRow {
                video_id: id.clone(),
                instance_index: j,
                planted_intensity: v,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads planted intensities; rows of a video must be contiguous and
/// numbered `0, 1, 2, ...`.
pub fn read_planted_csv(path: &Path) -> Result<PlantedIntensities> {
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = PlantedIntensities {
        video_ids: Vec::new(),
        values: Vec::new(),
    };
    for (line, row) in r.deserialize::<PlantedRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        if out.video_ids.last() != Some(&row.video_id) {
            out.video_ids.push(row.video_id.clone());
            out.values.push(Vec::new());
        }
        let values = out.values.last_mut().expect("pushed above");
        if row.instance_index != values.len() {
            return Err(format_err(
                path,
                format!("line {}: instance index {} out of order", line + 2, row.instance_index),
            ));
        }
        values.push(row.planted_intensity);
    }
    Ok(out)
}
