//! Run configuration: a JSON file whose keys may be overridden by flags.
//!
//! Every key is optional. The top-level `seed` drives the generator, the
//! split, network initialization, shuffling and cross-validation, so any
//! nested `seed` field is replaced by it.

use std::path::{Path, PathBuf};

use engage_mil::baselines::{GridSearchConfig, RidgeConfig, SgdConfig, SvrConfig};
use engage_mil::deepmil::{Pooling, TrainConfig};
use engage_mil::features::{FeatureKind, LbpTopConfig};
use engage_mil::weakdata::{AugmentPolicy, RelabelStrategy, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all cores when absent.
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub extract: ExtractConfig,
    pub synth: SyntheticSpec,
    pub split: SplitConfig,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of per-video frame archives (`extract`).
    pub input: Option<PathBuf>,
    /// `video_id,label` CSV (`extract`).
    pub labels: Option<PathBuf>,
    /// Rater annotation CSV fused into labels (`extract`).
    pub annotations: Option<PathBuf>,
    /// Dataset directory or its `index.json`.
    pub dataset: Option<PathBuf>,
    /// Model directory written by `train`.
    pub model: Option<PathBuf>,
    /// Output file or directory of the command.
    pub out: Option<PathBuf>,
    /// Planted-intensity CSV joined into localization output.
    pub planted: Option<PathBuf>,
    /// Predictions CSV read by `eval`.
    pub predictions: Option<PathBuf>,
    /// File receiving the list of feature files the command read.
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub feature_kind: FeatureKind,
    /// Window length in sampled frames.
    pub window: usize,
    /// Window stride in sampled frames.
    pub stride: usize,
    pub target_fps: f64,
    pub instances_per_bag: usize,
    pub lbp: LbpTopConfig,
    /// Pose/gaze CSV name inside each video directory.
    pub pose_file: String,
    pub reliability_threshold: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            feature_kind: FeatureKind::PoseGaze,
            window: 20,
            stride: 10,
            target_fps: 6.0,
            instances_per_bag: 100,
            lbp: LbpTopConfig::default(),
            pose_file: "posegaze.csv".into(),
            reliability_threshold: engage_mil::eval::RELIABILITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svr,
    Sgd,
    Ridge,
    #[default]
    Milnet,
    Seqnet,
}

impl ModelKind {
    pub fn is_deep(self) -> bool {
        matches!(self, ModelKind::Milnet | ModelKind::Seqnet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub pooling: Pooling,
    pub relabel: RelabelStrategy,
    pub kmeans_k: usize,
    /// Class rebalancing of the training bags; none when absent.
    pub augment: Option<AugmentPolicy>,
    pub svr: SvrConfig,
    /// Cross-validated `(C, sigma)` selection; the fixed `svr` values are
    /// used when absent.
    pub grid: Option<GridSearchConfig>,
    pub sgd: SgdConfig,
    pub ridge: RidgeConfig,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::default(),
            pooling: Pooling::default(),
            relabel: RelabelStrategy::default(),
            kmeans_k: 5,
            augment: None,
            svr: SvrConfig::default(),
            grid: None,
            sgd: SgdConfig::default(),
            ridge: RidgeConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub model_kind: Option<ModelKind>,
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub audit: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| UsageError(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        config.apply(overrides);
        Ok(config)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        if let Some(kind) = o.model_kind {
            self.model.kind = kind;
        }
        let paths = [
            (&o.model, &mut self.paths.model),
            (&o.dataset, &mut self.paths.dataset),
            (&o.out, &mut self.paths.out),
            (&o.audit, &mut self.paths.audit),
        ];
        for (flag, slot) in paths {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        let seed = self.seed;
        self.synth.seed = seed;
        self.model.sgd.seed = seed;
        self.model.train.seed = seed;
        if let Some(grid) = &mut self.model.grid {
            grid.seed = seed;
        }
    }

    /// A required path, or a usage error naming the config key.
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> anyhow::Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| UsageError(format!("missing path: set paths.{key} or pass the flag")).into())
    }

    /// `index.json` of the configured dataset.
    pub fn dataset_index(&self) -> anyhow::Result<PathBuf> {
        let p = self.require(&self.paths.dataset, "dataset")?;
        Ok(if p.is_dir() {
            p.join(engage_mil::weakdata::store::INDEX_FILE)
        } else {
            p.to_path_buf()
        })
    }

    pub fn pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
