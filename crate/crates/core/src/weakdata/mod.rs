//! Bags, datasets and everything that manipulates weak labels.

use ndarray::Array2;
use thiserror::Error;

use crate::features::{FeatureError, FeatureKind, SegmentFeature};

mod augment;
mod bags;
mod kmeans;
mod relabel;
mod split;
pub mod store;
mod synth;

pub use augment::{augment, augment_with, AugmentPolicy};
pub use bags::{make_bags, resample_indices};
pub use kmeans::{kmeans, kmeans_with, KMeansConfig, KMeansResult};
pub use relabel::{relabel, InstanceLabeling, RelabelStrategy};
pub use split::{plan_split, split_subject_independent, SplitPlan};
pub use synth::{synth_generate, PlantedIntensities, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("video {0} has no segments")]
    EmptyVideo(String),
    #[error("cannot split: {0}")]
    CannotSplit(String),
    #[error("invalid k: {0}")]
    InvalidK(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {message}")]
    Format {
        path: std::path::PathBuf,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One video: `M` instance vectors (rows) and a weak label in `0..=3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub video_id: String,
    pub subject_id: String,
    pub instances: Array2<f64>,
    pub label: u8,
}

impl Bag {
    pub fn new(
        video_id: impl Into<String>,
        subject_id: impl Into<String>,
        instances: Array2<f64>,
        label: u8,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if label > crate::MAX_LEVEL {
            return Err(DataError::InvalidInput(format!(
                "label {label} of {video_id} outside 0..=3"
            )));
        }
        if instances.nrows() == 0 {
            return Err(DataError::EmptyVideo(video_id));
        }
        Ok(Bag {
            video_id,
            subject_id: subject_id.into(),
            instances,
            label,
        })
    }

    pub fn instance_count(&self) -> usize {
        self.instances.nrows()
    }

    pub fn dim(&self) -> usize {
        self.instances.ncols()
    }
}

/// `N` bags sharing the instance count `M` and the feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bags: Vec<Bag>,
    feature_kind: FeatureKind,
    instances_per_bag: usize,
}

impl Dataset {
    pub fn new(bags: Vec<Bag>, feature_kind: FeatureKind) -> Result<Self> {
        let first = bags
            .first()
            .ok_or_else(|| DataError::InvalidInput("dataset needs at least one bag".into()))?;
        let (m, d) = (first.instance_count(), first.dim());
        for b in &bags {
            if b.instance_count() != m || b.dim() != d {
                return Err(DataError::InvalidInput(format!(
                    "bag {} is {}x{}, expected {m}x{d}",
                    b.video_id,
                    b.instance_count(),
                    b.dim()
                )));
            }
        }
        Ok(Dataset {
            bags,
            feature_kind,
            instances_per_bag: m,
        })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn into_bags(self) -> Vec<Bag> {
        self.bags
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.feature_kind
    }

    pub fn instances_per_bag(&self) -> usize {
        self.instances_per_bag
    }

    pub fn dim(&self) -> usize {
        self.bags[0].dim()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.bags.iter().map(|b| b.label).collect()
    }

    /// Bag counts per level `0..=3`.
    pub fn class_counts(&self) -> [usize; crate::LEVELS] {
        let mut counts = [0; crate::LEVELS];
        for b in &self.bags {
            counts[b.label as usize] += 1;
        }
        counts
    }

    /// Distinct subjects in sorted order.
    pub fn subjects(&self) -> std::collections::BTreeSet<&str> {
        self.bags.iter().map(|b| b.subject_id.as_str()).collect()
    }

    /// All instances stacked bag by bag, `(N*M) x D`.
    pub fn stacked_instances(&self) -> Array2<f64> {
        let views: Vec<_> = self.bags.iter().map(|b| b.instances.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("shapes checked at construction")
    }
}

/// Read access to bags, so that consumers which must only see a given
/// subset (model selection) can be audited.
pub trait BagSource: Sync {
    fn bag_count(&self) -> usize;
    fn bag(&self, index: usize) -> &Bag;
}

impl BagSource for Dataset {
    fn bag_count(&self) -> usize {
        self.bags.len()
    }

    fn bag(&self, index: usize) -> &Bag {
        &self.bags[index]
    }
}

/// Wraps a [`BagSource`] and records every video id that is read.
pub struct AccessLog<'a, S: BagSource> {
    inner: &'a S,
    seen: std::sync::Mutex<std::collections::BTreeSet<String>>,
}

impl<'a, S: BagSource> AccessLog<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        AccessLog {
            inner,
            seen: Default::default(),
        }
    }

    pub fn accessed(&self) -> std::collections::BTreeSet<String> {
        self.seen.lock().expect("access log poisoned").clone()
    }
}

impl<S: BagSource> BagSource for AccessLog<'_, S> {
    fn bag_count(&self) -> usize {
        self.inner.bag_count()
    }

    fn bag(&self, index: usize) -> &Bag {
        let bag = self.inner.bag(index);
        self.seen
            .lock()
            .expect("access log poisoned")
            .insert(bag.video_id.clone());
        bag
    }
}

/// Stacks per-segment vectors into an instance matrix.
pub(crate) fn features_to_matrix(features: &[&SegmentFeature]) -> Result<Array2<f64>> {
    let d = features[0].vector.len();
    if features.iter().any(|f| f.vector.len() != d) {
        return Err(DataError::InvalidInput("segments differ in dimension".into()));
    }
    let flat: Vec<f64> = features.iter().flat_map(|f| f.vector.iter().copied()).collect();
    Ok(Array2::from_shape_vec((features.len(), d), flat).expect("length checked"))
}
