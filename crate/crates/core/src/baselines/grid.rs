use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use super::svr::{svr_train, SvrConfig};
use super::{aggregate_video, BaselineError, Result};
use crate::weakdata::{BagSource, InstanceLabeling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSearchConfig {
    pub c_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Settings shared by every cell besides `C` and `sigma`.
    pub base: SvrConfig,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        GridSearchConfig {
            c_grid: vec![0.1, 1.0, 10.0],
            sigma_grid: vec![0.5, 1.0, 2.0, 4.0],
            folds: 3,
            seed: 0,
            base: SvrConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    #[serde(rename = "C")]
    pub c: f64,
    pub sigma: f64,
    /// Video-level MSE pooled over all held-out folds.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: GridCell,
    /// One entry per `(C, sigma)` pair, `C`-major in grid order.
    pub cells: Vec<GridCell>,
}

impl GridSearchResult {
    pub fn best_config(&self, base: &SvrConfig) -> SvrConfig {
        SvrConfig {
            c: self.best.c,
            kernel: KernelSpec::gaussian(self.best.sigma),
            ..*base
        }
    }
}

/// Instances of the bags at `indices`, stacked, with their instance labels.
pub fn instance_training_set<S: BagSource + ?Sized>(
    source: &S,
    indices: &[usize],
    labeling: &InstanceLabeling,
) -> (Array2<f64>, Vec<f64>) {
    let bags: Vec<_> = indices.iter().map(|&i| source.bag(i)).collect();
    let views: Vec<_> = bags.iter().map(|b| b.instances.view()).collect();
    let x = ndarray::concatenate(ndarray::Axis(0), &views).expect("bags share a dimension");
    let y = indices
        .iter()
        .flat_map(|&i| labeling.bag(i).iter().copied())
        .collect();
    (x, y)
}

/// Fold of every bag: subjects are shuffled with `seed` and dealt round-robin.
fn subject_folds<S: BagSource + ?Sized>(source: &S, folds: usize, seed: u64) -> Result<Vec<usize>> {
    let subjects: BTreeSet<&str> = (0..source.bag_count())
        .map(|i| source.bag(i).subject_id.as_str())
        .collect();
    if folds < 2 || subjects.len() < folds {
        return Err(BaselineError::InvalidFolds(format!(
            "{folds} folds over {} subjects",
            subjects.len()
        )));
    }
    let mut order: Vec<&str> = subjects.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: BTreeMap<&str, usize> = order.iter().enumerate().map(|(p, s)| (*s, p % folds)).collect();
    Ok((0..source.bag_count())
        .map(|i| fold_of[source.bag(i).subject_id.as_str()])
        .collect())
}

/// Cross-validated `(C, sigma)` selection on training bags only.
///
/// Folds never split a subject. The winning cell has the lowest pooled
/// video-level MSE; ties go to the smaller `C`, then the smaller `sigma`.
pub fn grid_search_svr<S: BagSource + ?Sized>(
    train: &S,
    labeling: &InstanceLabeling,
    config: &GridSearchConfig,
) -> Result<GridSearchResult> {
    if config.c_grid.is_empty() || config.sigma_grid.is_empty() {
        return Err(BaselineError::InvalidInput("empty parameter grid".into()));
    }
    if labeling.labels.len() != train.bag_count() {
        return Err(BaselineError::InvalidInput(format!(
            "{} labeled bags for {} training bags",
            labeling.labels.len(),
            train.bag_count()
        )));
    }
    let fold_of = subject_folds(train, config.folds, config.seed)?;
    struct Fold {
        x: Array2<f64>,
        y: Vec<f64>,
        held_out: Vec<usize>,
    }
    let folds: Vec<Fold> = (0..config.folds)
        .map(|f| {
            let fit_idx: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] != f).collect();
            let (x, y) = instance_training_set(train, &fit_idx, labeling);
            Fold {
                x,
                y,
                held_out: (0..fold_of.len()).filter(|&i| fold_of[i] == f).collect(),
            }
        })
        .collect();

    let pairs: Vec<(f64, f64)> = config
        .c_grid
        .iter()
        .flat_map(|&c| config.sigma_grid.iter().map(move |&s| (c, s)))
        .collect();
    let cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(c, sigma)| -> Result<GridCell> {
            let cfg = SvrConfig {
                c,
                kernel: KernelSpec::gaussian(sigma),
                ..config.base
            };
            let mut sse = 0.0;
            let mut count = 0usize;
            for fold in &folds {
                let model = svr_train(fold.x.view(), &fold.y, &cfg)?.model;
                for &i in &fold.held_out {
                    let bag = train.bag(i);
                    let video = aggregate_video(&model.predict_rows(bag.instances.view())?)?;
                    sse += (video - bag.label as f64).powi(2);
                    count += 1;
                }
            }
            Ok(GridCell {
                c,
                sigma,
                mse: sse / count as f64,
            })
        })
        .collect::<Result<_>>()?;
    let best = *cells
        .iter()
        .min_by(|a, b| {
            a.mse
                .total_cmp(&b.mse)
                .then(a.c.total_cmp(&b.c))
                .then(a.sigma.total_cmp(&b.sigma))
        })
        .expect("grid is non-empty");
    Ok(GridSearchResult { best, cells })
}
