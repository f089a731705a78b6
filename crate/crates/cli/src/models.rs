//! The model directory written by `train`: the model file plus `meta.json`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use engage_mil::baselines::{aggregate_video, LinearModel, RidgePosterior, SvrModel};
use engage_mil::deepmil::NetworkFile;
use engage_mil::features::FeatureKind;
use engage_mil::weakdata::store::DatasetIndex;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::IncompatibleArtifacts;

pub const META_FILE: &str = "meta.json";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";

/// What `train` saw, for the commands that consume the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model: ModelKind,
    /// Relative to the model directory.
    pub model_file: PathBuf,
    pub feature_kind: FeatureKind,
    pub dim: usize,
    pub instances_per_bag: usize,
    pub seed: u64,
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
    pub train_videos: usize,
}

impl ModelMeta {
    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Errors unless `index` holds the same kind and shape of features.
    pub fn check_compatible(&self, index: &DatasetIndex) -> anyhow::Result<()> {
        if index.feature_kind != self.feature_kind
            || index.dim != self.dim
            || (self.model == ModelKind::Seqnet && index.instances_per_bag != self.instances_per_bag)
        {
            return Err(IncompatibleArtifacts(format!(
                "model was trained on {} features of dimension {} with M = {}, dataset has {} features of dimension {} with M = {}",
                self.feature_kind,
                self.dim,
                self.instances_per_bag,
                index.feature_kind,
                index.dim,
                index.instances_per_bag
            ))
            .into());
        }
        Ok(())
    }
}

pub enum TrainedModel {
    Svr(SvrModel),
    Sgd(LinearModel),
    Ridge(RidgePosterior),
    Net(NetworkFile),
}

impl TrainedModel {
    pub fn file_name(kind: ModelKind) -> &'static str {
        match kind {
            ModelKind::Svr => "model.svr",
            ModelKind::Sgd => "model.sgd.json",
            ModelKind::Ridge => "model.ridge.json",
            ModelKind::Milnet | ModelKind::Seqnet => "model.emnn",
        }
    }

    pub fn save(&self, path: &Path, feature_kind: FeatureKind) -> anyhow::Result<()> {
        match self {
            TrainedModel::Svr(m) => m.save(path, feature_kind)?,
            TrainedModel::Sgd(m) => m.save(path)?,
            TrainedModel::Ridge(m) => m.save(path)?,
            TrainedModel::Net(m) => m.save(path, feature_kind)?,
        }
        Ok(())
    }

    pub fn load(dir: &Path, meta: &ModelMeta) -> anyhow::Result<Self> {
        let path = dir.join(&meta.model_file);
        let (model, kind) = match meta.model {
            ModelKind::Svr => {
                let (m, k) = SvrModel::load(&path)?;
                (TrainedModel::Svr(m), Some(k))
            }
            ModelKind::Sgd => (TrainedModel::Sgd(LinearModel::load(&path)?), None),
            ModelKind::Ridge => (TrainedModel::Ridge(RidgePosterior::load(&path)?), None),
            ModelKind::Milnet | ModelKind::Seqnet => {
                let (m, k) = NetworkFile::load(&path)?;
                let matches = matches!(
                    (&m, meta.model),
                    (NetworkFile::Mil(_), ModelKind::Milnet) | (NetworkFile::Seq(_), ModelKind::Seqnet)
                );
                if !matches {
                    return Err(IncompatibleArtifacts(format!(
                        "{} does not hold a {:?} network",
                        path.display(),
                        meta.model
                    ))
                    .into());
                }
                (TrainedModel::Net(m), Some(k))
            }
        };
        if kind.is_some_and(|k| k != meta.feature_kind) {
            return Err(IncompatibleArtifacts(format!(
                "{} was saved for different features than {} records",
                path.display(),
                META_FILE
            ))
            .into());
        }
        Ok(model)
    }

    /// Per-segment intensities of one bag.
    pub fn localize(&self, bag: ArrayView2<f64>) -> anyhow::Result<Vec<f64>> {
        Ok(match self {
            TrainedModel::Svr(m) => m.predict_rows(bag)?,
            TrainedModel::Sgd(m) => m.predict_rows(bag)?,
            TrainedModel::Ridge(m) => m.predict_rows(bag)?,
            TrainedModel::Net(m) => m.localize(bag)?.values,
        })
    }

    /// Video-level prediction: the network's bag score, or the mean of the
    /// segment predictions for the instance-level baselines.
    pub fn predict(&self, bag: ArrayView2<f64>) -> anyhow::Result<f64> {
        match self {
            TrainedModel::Net(m) => Ok(m.predict(bag)?),
            _ => Ok(aggregate_video(&self.localize(bag)?)?),
        }
    }
}
