//! Annotation fusion and the reported metrics.
//!
//! Rater reliability is the mean quadratic-weighted kappa of a rater
//! against every other rater, computed over jointly observed videos.
//! Raters below the threshold are dropped and the rest are averaged per
//! video and rounded half away from zero.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::LEVELS;

/// Raters whose mean pairwise kappa falls below this are ignored.
pub const RELIABILITY_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("label {label} outside 0..{levels}")]
    LabelOutOfRange { label: usize, levels: usize },
    #[error("kappa undefined: both raters are constant and disagree")]
    DegenerateMarginals,
    #[error("correlation undefined: an input is constant")]
    UndefinedCorrelation,
    #[error("every rater fell below the reliability threshold")]
    NoReliableRaters,
    #[error("video {0} has no label from a reliable rater")]
    UnlabeledVideo(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Quadratic-weighted Cohen's kappa between two raters over `levels`
/// ordinal levels.
pub fn quadratic_weighted_kappa(a: &[usize], b: &[usize], levels: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() || levels < 2 {
        return Err(EvalError::TooShort {
            needed: 1,
            found: a.len(),
        });
    }
    if let Some(&label) = a.iter().chain(b).find(|&&v| v >= levels) {
        return Err(EvalError::LabelOutOfRange { label, levels });
    }
    let mut joint = vec![0usize; levels * levels];
    let mut row = vec![0usize; levels];
    let mut col = vec![0usize; levels];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * levels + j] += 1;
        row[i] += 1;
        col[j] += 1;
    }
    let n = a.len() as f64;
    let scale = ((levels - 1) * (levels - 1)) as f64;
    let (mut observed, mut expected) = (0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let w = (i.abs_diff(j) * i.abs_diff(j)) as f64 / scale;
            observed += w * joint[i * levels + j] as f64 / n;
            expected += w * (row[i] as f64 / n) * (col[j] as f64 / n);
        }
    }
    if expected == 0.0 {
        return if observed == 0.0 {
            Ok(1.0)
        } else {
            Err(EvalError::DegenerateMarginals)
        };
    }
    Ok(1.0 - observed / expected)
}

/// Videos by raters, `None` where a rater gave no label.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    pub video_ids: Vec<String>,
    pub rater_ids: Vec<String>,
    /// `labels[video][rater]`
    pub labels: Vec<Vec<Option<u8>>>,
}

impl AnnotationMatrix {
    pub fn new(video_ids: Vec<String>, rater_ids: Vec<String>, labels: Vec<Vec<Option<u8>>>) -> Result<Self> {
        if labels.len() != video_ids.len() {
            return Err(EvalError::LengthMismatch(labels.len(), video_ids.len()));
        }
        if rater_ids.len() < 2 {
            return Err(EvalError::TooShort {
                needed: 2,
                found: rater_ids.len(),
            });
        }
        for row in &labels {
            if row.len() != rater_ids.len() {
                return Err(EvalError::LengthMismatch(row.len(), rater_ids.len()));
            }
            if let Some(label) = row.iter().flatten().find(|&&v| v as usize >= LEVELS) {
                return Err(EvalError::LabelOutOfRange {
                    label: *label as usize,
                    levels: LEVELS,
                });
            }
        }
        Ok(AnnotationMatrix {
            video_ids,
            rater_ids,
            labels,
        })
    }

    /// Matrix from fully observed rows, with generated ids.
    pub fn from_complete(rows: &[Vec<u8>]) -> Result<Self> {
        let raters = rows.first().map_or(0, |r| r.len());
        Self::new(
            (0..rows.len()).map(|v| format!("v{v}")).collect(),
            (0..raters).map(|r| format!("r{r}")).collect(),
            rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        )
    }

    pub fn raters(&self) -> usize {
        self.rater_ids.len()
    }

    /// Reads `video_id,<rater>,...` rows; blank cells are missing labels.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |m: String| EvalError::Format {
            path: path.to_path_buf(),
            message: m,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| bad(e.to_string()))?;
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let rater_ids: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut video_ids = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            video_ids.push(record.get(0).unwrap_or_default().to_string());
            let row = record
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<u8>()
                            .map(Some)
                            .map_err(|_| bad(format!("row {}: bad label {cell:?}", line + 2)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            labels.push(row);
        }
        Self::new(video_ids, rater_ids, labels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| EvalError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["video_id".to_string()];
        header.extend(self.rater_ids.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for (id, row) in self.video_ids.iter().zip(&self.labels) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.map_or(String::new(), |l| l.to_string())));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Kappa between two raters over the videos both labeled, or `None`
    /// when they share no video or the kappa is undefined.
    pub fn pairwise_kappa(&self, r: usize, s: usize) -> Option<f64> {
        let (a, b): (Vec<usize>, Vec<usize>) = self
            .labels
            .iter()
            .filter_map(|row| Some((row[r]? as usize, row[s]? as usize)))
            .unzip();
        if a.is_empty() {
            return None;
        }
        quadratic_weighted_kappa(&a, &b, LEVELS).ok()
    }

    /// Mean pairwise kappa of every rater against all others. A rater
    /// without any defined pair gets `None`.
    pub fn reliability(&self) -> Vec<Option<f64>> {
        (0..self.raters())
            .map(|r| {
                let ks: Vec<f64> = (0..self.raters())
                    .filter(|&s| s != r)
                    .filter_map(|s| self.pairwise_kappa(r, s))
                    .collect();
                (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedLabels {
    pub labels: Vec<u8>,
    /// Indices of the ignored raters.
    pub dropped: Vec<usize>,
    pub reliability: Vec<Option<f64>>,
}

/// Drops unreliable raters and fuses the rest by rounded mean.
pub fn fuse_labels(annotations: &AnnotationMatrix, threshold: f64) -> Result<FusedLabels> {
    let reliability = annotations.reliability();
    let dropped: Vec<usize> = reliability
        .iter()
        .enumerate()
        .filter(|(_, k)| k.is_none_or(|k| k < threshold))
        .map(|(r, _)| r)
        .collect();
    if dropped.len() == annotations.raters() {
        return Err(EvalError::NoReliableRaters);
    }
    let labels = annotations
        .labels
        .iter()
        .zip(&annotations.video_ids)
        .map(|(row, id)| {
            let kept: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|(r, _)| !dropped.contains(r))
                .filter_map(|(_, v)| v.map(f64::from))
                .collect();
            if kept.is_empty() {
                return Err(EvalError::UnlabeledVideo(id.clone()));
            }
            // f64::round rounds half away from zero.
            Ok((kept.iter().sum::<f64>() / kept.len() as f64).round() as u8)
        })
        .collect::<Result<_>>()?;
    Ok(FusedLabels {
        labels,
        dropped,
        reliability,
    })
}

fn check_pair(pred: &[f64], truth: &[f64], needed: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.len() < needed {
        return Err(EvalError::TooShort {
            needed,
            found: pred.len(),
        });
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// MSE over the samples whose truth equals each level; `None` for levels
/// that do not occur.
pub fn classwise_mse(pred: &[f64], truth: &[f64]) -> Result<[Option<f64>; LEVELS]> {
    check_pair(pred, truth, 1)?;
    let mut out = [None; LEVELS];
    for (level, slot) in out.iter_mut().enumerate() {
        let (p, t): (Vec<f64>, Vec<f64>) = pred
            .iter()
            .zip(truth)
            .filter(|(_, &t)| t == level as f64)
            .map(|(p, t)| (*p, *t))
            .unzip();
        if !p.is_empty() {
            *slot = Some(mse(&p, &t)?);
        }
    }
    Ok(out)
}

/// Sample Pearson correlation.
pub fn pcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut spt, mut spp, mut stt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        spt += dp * dt;
        spp += dp * dp;
        stt += dt * dt;
    }
    if spp == 0.0 || stt == 0.0 {
        return Err(EvalError::UndefinedCorrelation);
    }
    Ok((spt / (spp.sqrt() * stt.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub level: u8,
    pub count: usize,
    /// Absent when the level has no samples.
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub mse: f64,
    pub classwise: Vec<ClassMetrics>,
    /// Absent when either side is constant.
    pub pcc: Option<f64>,
}

impl MetricsReport {
    /// Metrics of predictions against integer levels.
    pub fn compute(pred: &[f64], labels: &[u8]) -> Result<Self> {
        let truth: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let overall = mse(pred, &truth)?;
        let per_class = classwise_mse(pred, &truth)?;
        let classwise = (0..LEVELS)
            .map(|level| ClassMetrics {
                level: level as u8,
                count: labels.iter().filter(|&&l| l as usize == level).count(),
                mse: per_class[level],
            })
            .collect();
        let pcc = match pcc(pred, &truth) {
            Ok(v) => Some(v),
            Err(EvalError::UndefinedCorrelation | EvalError::TooShort { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            count: pred.len(),
            mse: overall,
            classwise,
            pcc,
        })
    }
}
