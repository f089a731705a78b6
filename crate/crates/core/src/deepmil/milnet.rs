use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{Activation, DenseLayer};
use super::{check_bag, DeepMilError, MilModel, Pooling, Result};

/// Hidden widths of the instance scorer.
pub const MIL_HIDDEN: [usize; 3] = [128, 64, 32];

/// Shared per-instance scorer (ReLU hidden layers, one linear ranking
/// unit) followed by bag pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct MilNet {
    pub layers: Vec<DenseLayer>,
    pub pooling: Pooling,
    pub output_scale: f64,
}

struct Forward {
    /// Input followed by every layer output.
    acts: Vec<Array2<f64>>,
}

impl MilNet {
    pub fn new(input_dim: usize, hidden: &[usize], pooling: Pooling, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(DeepMilError::InvalidConfig("layer widths must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut inputs = input_dim;
        for &w in hidden {
            layers.push(DenseLayer::new(inputs, w, Activation::Relu, &mut rng));
            inputs = w;
        }
        layers.push(DenseLayer::new(inputs, 1, Activation::Linear, &mut rng));
        Ok(MilNet {
            layers,
            pooling,
            output_scale: 1.0,
        })
    }

    /// The default 128-64-32-1 scorer.
    pub fn standard(input_dim: usize, pooling: Pooling, seed: u64) -> Result<Self> {
        Self::new(input_dim, &MIL_HIDDEN, pooling, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn run(&self, bag: ArrayView2<f64>) -> Result<Forward> {
        check_bag(bag, None, self.input_dim())?;
        let mut acts = vec![bag.to_owned()];
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("input present").view());
            acts.push(next);
        }
        Ok(Forward { acts })
    }

    /// Raw bag score and the per-instance ranking outputs.
    pub fn forward(&self, bag: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let fw = self.run(bag)?;
        let r: Vec<f64> = fw.acts.last().expect("output present").column(0).to_vec();
        Ok((self.pooling.pool(&r)?, r))
    }
}

impl MilModel for MilNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.blocks()).collect()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect()
    }

    fn score(&self, bag: ArrayView2<f64>) -> Result<f64> {
        Ok(self.forward(bag)?.0)
    }

    fn loss_and_grad(&self, bag: ArrayView2<f64>, target: f64) -> Result<(f64, Vec<f64>)> {
        let fw = self.run(bag)?;
        let r: Vec<f64> = fw.acts.last().expect("output present").column(0).to_vec();
        let score = self.pooling.pool(&r)?;
        let err = score - target;
        // Only the pooled instances receive gradient.
        let pool_w = self.pooling.weights(&r)?;
        let mut delta = Array2::from_shape_fn((r.len(), 1), |(i, _)| 2.0 * err * pool_w[i]);
        let sizes: Vec<usize> = self.param_blocks().iter().map(|b| b.len()).collect();
        let mut grad = vec![0.0; sizes.iter().sum()];
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for s in &sizes {
            offsets.push(at);
            at += s;
        }
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (w_at, b_at) = (offsets[2 * li], offsets[2 * li + 1]);
            let (head, tail) = grad.split_at_mut(b_at);
            delta = layer.backward(
                fw.acts[li].view(),
                fw.acts[li + 1].view(),
                delta.view(),
                &mut head[w_at..],
                &mut tail[..sizes[2 * li + 1]],
            );
        }
        Ok((err * err, grad))
    }

    fn raw_intensities(&self, bag: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.forward(bag)?.1)
    }

    fn output_scale(&self) -> f64 {
        self.output_scale
    }

    fn set_output_scale(&mut self, scale: f64) {
        self.output_scale = scale;
    }
}
