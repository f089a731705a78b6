//! Deep multiple-instance regressors with handwritten backpropagation.
//!
//! * [`MilNet`] scores every instance with a shared dense stack ending in
//!   a one-unit ranking layer and pools the scores (top-k mean or mean).
//! * [`SeqNet`] runs an LSTM over the segments in temporal order, flattens
//!   the per-segment hidden states and maps them through three sigmoid
//!   dense layers whose outputs are average-pooled.
//!
//! Both expose their parameters as flat blocks so that [`train`], the
//! gradient checks and persistence treat them uniformly.

use std::path::PathBuf;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weakdata::Dataset;

mod dense;
mod lstm;
mod milnet;
mod persist;
mod seqnet;

pub use dense::{Activation, DenseLayer};
pub use lstm::{LstmLayer, LstmTrace};
pub use milnet::{MilNet, MIL_HIDDEN};
pub use persist::{NetworkFile, NETWORK_MAGIC};
pub use seqnet::{SeqNet, SEQ_HEAD, SEQ_HIDDEN};

#[derive(Debug, Error)]
pub enum DeepMilError {
    #[error("dimension mismatch: network expects {expected}, input has {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        trace: Vec<f64>,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DeepMilError> = std::result::Result<T, E>;

/// Pooling of per-instance scores into the bag score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Pooling {
    /// Mean of the `k` largest scores.
    TopK { k: usize },
    Mean,
}

impl Default for Pooling {
    fn default() -> Self {
        Pooling::TopK { k: 10 }
    }
}

impl Pooling {
    pub fn pool(&self, r: &[f64]) -> Result<f64> {
        match *self {
            Pooling::TopK { k } => topk_pool(r, k),
            Pooling::Mean => Ok(mean_pool(r)),
        }
    }

    /// d(score)/d(r_j) for every instance.
    pub fn weights(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut w = vec![0.0; r.len()];
        match *self {
            Pooling::TopK { k } => {
                for i in topk_indices(r, k)? {
                    w[i] = 1.0 / k as f64;
                }
            }
            Pooling::Mean => w.iter_mut().for_each(|v| *v = 1.0 / r.len() as f64),
        }
        Ok(w)
    }
}

/// Per-instance engagement scores of one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceIntensities {
    pub values: Vec<f64>,
}

impl InstanceIntensities {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The scores in descending order.
    pub fn ranked(&self) -> Vec<f64> {
        let order = rank_order(&self.values);
        order.into_iter().map(|i| self.values[i]).collect()
    }
}

/// Instance indices by descending score; equal scores keep index order.
fn rank_order(r: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    order
}

/// Indices of the `k` largest entries in rank order. Among equal values the
/// lower index is selected first.
pub fn topk_indices(r: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > r.len() {
        return Err(DeepMilError::InvalidConfig(format!(
            "top-k with k = {k} over {} instances",
            r.len()
        )));
    }
    let mut order = rank_order(r);
    order.truncate(k);
    Ok(order)
}

/// Mean of the `k` largest entries, summed in descending order.
pub fn topk_pool(r: &[f64], k: usize) -> Result<f64> {
    let idx = topk_indices(r, k)?;
    Ok(idx.iter().map(|&i| r[i]).sum::<f64>() / k as f64)
}

/// Mean of all entries, summed in descending order so that it coincides
/// with `topk_pool(r, r.len())` bit for bit.
pub fn mean_pool(r: &[f64]) -> f64 {
    rank_order(r).iter().map(|&i| r[i]).sum::<f64>() / r.len() as f64
}

/// `(pred - label)^2`
pub fn mil_loss(pred: f64, label: f64) -> f64 {
    (pred - label) * (pred - label)
}

/// Behaviour shared by both architectures.
pub trait MilModel: Sync {
    /// Parameter blocks in a fixed order.
    fn param_blocks(&self) -> Vec<&[f64]>;
    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    /// Raw bag score before output rescaling.
    fn score(&self, bag: ArrayView2<f64>) -> Result<f64>;

    /// Loss `(score - target)^2` and its gradient, flattened in
    /// [`MilModel::param_blocks`] order.
    fn loss_and_grad(&self, bag: ArrayView2<f64>, target: f64) -> Result<(f64, Vec<f64>)>;

    /// Raw per-instance intensities before output rescaling.
    fn raw_intensities(&self, bag: ArrayView2<f64>) -> Result<Vec<f64>>;

    /// Factor mapping raw outputs to the label range.
    fn output_scale(&self) -> f64;
    fn set_output_scale(&mut self, scale: f64);

    /// Bag prediction on the label scale.
    fn predict(&self, bag: ArrayView2<f64>) -> Result<f64> {
        Ok(self.score(bag)? * self.output_scale())
    }

    /// Per-instance intensities on the label scale.
    fn localize(&self, bag: ArrayView2<f64>) -> Result<InstanceIntensities> {
        let scale = self.output_scale();
        Ok(InstanceIntensities {
            values: self.raw_intensities(bag)?.into_iter().map(|v| v * scale).collect(),
        })
    }

    /// Copies all parameters into one vector.
    fn flat_params(&self) -> Vec<f64> {
        self.param_blocks().concat()
    }

    fn set_flat_params(&mut self, values: &[f64]) {
        let mut at = 0;
        for block in self.param_blocks_mut() {
            block.copy_from_slice(&values[at..at + block.len()]);
            at += block.len();
        }
        assert_eq!(at, values.len(), "parameter vector length");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Bags per update.
    pub batch_size: usize,
    pub seed: u64,
    /// Train against `label / 3` and report outputs times 3.
    pub label_scaling: bool,
    /// Largest allowed L2 norm of a batch gradient; 0 disables clipping.
    pub clip_norm: f64,
    /// Heavy-ball momentum coefficient; 0 is plain SGD.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 1,
            seed: 0,
            label_scaling: true,
            clip_norm: 5.0,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DeepMilError::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(DeepMilError::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.clip_norm >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(DeepMilError::InvalidConfig(
                "clip norm must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        if self.label_scaling {
            crate::MAX_LEVEL as f64
        } else {
            1.0
        }
    }
}

/// Minibatch SGD over the bags of `data`.
///
/// Bags are shuffled every epoch from `config.seed`. Per-bag gradients of a
/// batch are computed in parallel and summed in batch order, so results do
/// not depend on the thread count. Returns the mean per-bag loss of every
/// epoch on the training scale.
pub fn train<N: MilModel>(net: &mut N, data: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let scale = config.scale();
    net.set_output_scale(scale);
    let targets: Vec<f64> = data.bags().iter().map(|b| b.label as f64 / scale).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity = vec![0.0; net.param_count()];
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let net_ref: &N = net;
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| net_ref.loss_and_grad(data.bags()[i].instances.view(), targets[i]))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; velocity.len()];
            for (loss, g) in &results {
                epoch_loss += loss;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(DeepMilError::Diverged {
                    epoch,
                    loss: f64::NAN,
                    trace,
                });
            }
            if config.clip_norm > 0.0 && norm > config.clip_norm {
                let f = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= f);
            }
            let mut at = 0;
            for block in net.param_blocks_mut() {
                for p in block.iter_mut() {
                    let v = &mut velocity[at];
                    *v = config.momentum * *v - config.learning_rate * grad[at];
                    *p += *v;
                    at += 1;
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(DeepMilError::Diverged {
                epoch,
                loss: mean,
                trace,
            });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        trace.push(mean);
    }
    Ok(trace)
}

fn check_bag(bag: ArrayView2<f64>, rows: Option<usize>, dim: usize) -> Result<()> {
    let rows_ok = rows.is_none_or(|m| bag.nrows() == m);
    if !rows_ok || bag.ncols() != dim || bag.nrows() == 0 {
        return Err(DeepMilError::DimensionMismatch {
            expected: match rows {
                Some(m) => format!("{m}x{dim}"),
                None => format!("Mx{dim}"),
            },
            found: format!("{}x{}", bag.nrows(), bag.ncols()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use engage_mil_oracles::topk_by_sort;
    use rand::Rng;

    #[test]
    fn pooling_examples() {
        assert_eq!(topk_pool(&[1.5; 12], 10).unwrap(), 1.5);
        let mut r = vec![0.0; 10];
        r[..3].copy_from_slice(&[3.0, 2.0, 1.0]);
        assert_eq!(topk_pool(&r, 2).unwrap(), 2.5);
        assert_eq!(mean_pool(&[0.0, 3.0]), 1.5);
        assert_eq!(mean_pool(&[0.7; 5]), 0.7);
        assert!(topk_pool(&r, 0).is_err());
        assert!(topk_pool(&r, 11).is_err());
    }

    #[test]
    fn topk_matches_sort_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let r: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
            let k = rng.random_range(1..=100);
            assert_eq!(topk_pool(&r, k).unwrap(), topk_by_sort(&r, k));
            assert_eq!(topk_pool(&r, 100).unwrap(), mean_pool(&r));
        }
    }

    #[test]
    fn ties_select_lower_index() {
        assert_eq!(topk_indices(&[1.0, 2.0, 2.0, 2.0], 2).unwrap(), vec![1, 2]);
        let w = Pooling::TopK { k: 1 }.weights(&[0.5, 0.5]).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(mil_loss(2.0, 2.0), 0.0);
        assert_eq!(mil_loss(1.0, 3.0), 4.0);
        let preds = [0.1, 2.5, 1.0, 3.0];
        let labels = [0.0, 3.0, 1.0, 1.0];
        let losses: Vec<f64> = preds.iter().zip(&labels).map(|(p, l)| mil_loss(*p, *l)).collect();
        let batch = losses.iter().sum::<f64>() / 4.0;
        let oracle = engage_mil_oracles::compensated_mean(&losses);
        assert!((batch - oracle).abs() < 1e-15);
    }

    #[test]
    fn ranked_view_is_descending() {
        let r = InstanceIntensities {
            values: vec![0.2, 1.0, -1.0, 0.5],
        };
        assert_eq!(r.ranked(), vec![1.0, 0.5, 0.2, -1.0]);
    }

    fn planted(seed: u64, noise: f64) -> Dataset {
        let spec = crate::weakdata::SyntheticSpec {
            subjects: 8,
            videos: 32,
            instances_per_bag: 8,
            dim: 4,
            class_distribution: [0.25; 4],
            noise_scale: noise,
            seed,
            ..Default::default()
        };
        crate::weakdata::synth_generate(&spec).unwrap().0
    }

    fn small_mil(seed: u64) -> MilNet {
        MilNet::new(4, &[16, 8], Pooling::Mean, seed).unwrap()
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let data = planted(0, 0.5);
        let mut net = small_mil(3);
        let init = net.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train(&mut net, &data, &cfg).unwrap().is_empty());
        assert_eq!(net.flat_params(), init.flat_params());
        assert_eq!(net.output_scale, 3.0);
    }

    #[test]
    fn noiseless_bags_are_learned() {
        let data = planted(1, 0.0);
        let mut net = small_mil(1);
        let cfg = TrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let trace = train(&mut net, &data, &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        let mse = data
            .bags()
            .iter()
            .map(|b| (net.predict(b.instances.view()).unwrap() - b.label as f64).powi(2))
            .sum::<f64>()
            / data.len() as f64;
        assert!(mse < 0.05, "training MSE {mse}");
    }

    #[test]
    fn training_is_deterministic_across_thread_counts() {
        let data = planted(2, 0.5);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let mut a = small_mil(0);
        let mut b = small_mil(0);
        let ta = train(&mut a, &data, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let tb = pool.install(|| train(&mut b, &data, &cfg)).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }

    #[test]
    fn unclipped_huge_step_diverges() {
        let data = planted(3, 0.5);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 3,
            clip_norm: 0.0,
            ..Default::default()
        };
        let mut net = small_mil(0);
        assert!(matches!(train(&mut net, &data, &cfg), Err(DeepMilError::Diverged { .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let data = planted(0, 0.5);
        for cfg in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
        ] {
            assert!(matches!(
                train(&mut small_mil(0), &data, &cfg),
                Err(DeepMilError::InvalidConfig(_))
            ));
        }
    }

    proptest::proptest! {
        #[test]
        fn topk_at_m_is_mean(r in proptest::collection::vec(-1e3f64..1e3, 1..120)) {
            proptest::prop_assert_eq!(topk_pool(&r, r.len()).unwrap(), mean_pool(&r));
        }

        #[test]
        fn topk_is_monotone(
            r in proptest::collection::vec(-10.0f64..10.0, 2..60),
            k_frac in 0.0f64..1.0,
            at in 0usize..60,
            bump in 0.0f64..5.0,
        ) {
            let k = 1 + ((r.len() - 1) as f64 * k_frac) as usize;
            let mut raised = r.clone();
            raised[at % r.len()] += bump;
            proptest::prop_assert!(topk_pool(&raised, k).unwrap() >= topk_pool(&r, k).unwrap() - 1e-12);
        }
    }
}
