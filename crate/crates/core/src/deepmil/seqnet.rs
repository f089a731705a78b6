use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{Activation, DenseLayer};
use super::lstm::LstmLayer;
use super::{check_bag, mean_pool, DeepMilError, MilModel, Result};

/// LSTM hidden width.
pub const SEQ_HIDDEN: usize = 32;

/// Widths of the first two head layers; the last one has `M` units.
pub const SEQ_HEAD: [usize; 2] = [64, 32];

/// LSTM over the segments in temporal order, then sigmoid dense layers on
/// the flattened `M x H` hidden states, average-pooled to the bag score.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqNet {
    pub lstm: LstmLayer,
    pub head: Vec<DenseLayer>,
    pub output_scale: f64,
}

impl SeqNet {
    pub fn new(input_dim: usize, segments: usize, hidden: usize, head: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || segments == 0 || hidden == 0 || head.contains(&0) {
            return Err(DeepMilError::InvalidConfig("layer widths must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = LstmLayer::new(input_dim, hidden, &mut rng);
        let mut layers = Vec::with_capacity(head.len() + 1);
        let mut inputs = segments * hidden;
        for &w in head.iter().chain(std::iter::once(&segments)) {
            layers.push(DenseLayer::new(inputs, w, Activation::Sigmoid, &mut rng));
            inputs = w;
        }
        Ok(SeqNet {
            lstm,
            head: layers,
            output_scale: 1.0,
        })
    }

    /// The default network: 32 hidden units, head 64-32-M.
    pub fn standard(input_dim: usize, segments: usize, seed: u64) -> Result<Self> {
        Self::new(input_dim, segments, SEQ_HIDDEN, &SEQ_HEAD, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.inputs()
    }

    pub fn segments(&self) -> usize {
        self.head.last().expect("head present").outputs()
    }

    fn head_forward(&self, flat: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![flat];
        for layer in &self.head {
            let next = layer.forward(acts.last().expect("input present").view());
            acts.push(next);
        }
        acts
    }

    fn flatten(hidden: &Array2<f64>) -> Array2<f64> {
        let flat: Vec<f64> = hidden.iter().copied().collect();
        Array2::from_shape_vec((1, flat.len()), flat).expect("row vector")
    }

    fn check(&self, bag: ArrayView2<f64>) -> Result<()> {
        check_bag(bag, Some(self.segments()), self.input_dim())
    }
}

impl MilModel for SeqNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks: Vec<&[f64]> = self.lstm.blocks().into();
        blocks.extend(self.head.iter().flat_map(|l| l.blocks()));
        blocks
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = self.lstm.blocks_mut().into();
        blocks.extend(self.head.iter_mut().flat_map(|l| l.blocks_mut()));
        blocks
    }

    fn score(&self, bag: ArrayView2<f64>) -> Result<f64> {
        self.check(bag)?;
        let trace = self.lstm.forward(bag);
        let acts = self.head_forward(Self::flatten(&trace.hidden));
        Ok(mean_pool(acts.last().expect("output present").row(0).as_slice().expect("contiguous")))
    }

    fn loss_and_grad(&self, bag: ArrayView2<f64>, target: f64) -> Result<(f64, Vec<f64>)> {
        self.check(bag)?;
        let trace = self.lstm.forward(bag);
        let acts = self.head_forward(Self::flatten(&trace.hidden));
        let out = acts.last().expect("output present");
        let m = out.ncols();
        let score = mean_pool(out.row(0).as_slice().expect("contiguous"));
        let err = score - target;
        let sizes: Vec<usize> = self.param_blocks().iter().map(|b| b.len()).collect();
        let mut grad = vec![0.0; sizes.iter().sum()];
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for s in &sizes {
            offsets.push(at);
            at += s;
        }
        let mut delta = Array2::from_elem((1, m), 2.0 * err / m as f64);
        for (li, layer) in self.head.iter().enumerate().rev() {
            let (w_at, b_at) = (offsets[2 + 2 * li], offsets[3 + 2 * li]);
            let (head, tail) = grad.split_at_mut(b_at);
            delta = layer.backward(
                acts[li].view(),
                acts[li + 1].view(),
                delta.view(),
                &mut head[w_at..],
                &mut tail[..sizes[3 + 2 * li]],
            );
        }
        let d_hidden = delta
            .into_shape_with_order(trace.hidden.dim())
            .expect("flattened hidden states");
        let (lstm_w, rest) = grad.split_at_mut(offsets[1]);
        self.lstm
            .backward(bag, &trace, d_hidden.view(), lstm_w, &mut rest[..sizes[1]]);
        Ok((err * err, grad))
    }

    /// Segment `t` is scored by the head applied to the flattened states
    /// with every hidden state except `h_t` set to zero.
    fn raw_intensities(&self, bag: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check(bag)?;
        let hidden = self.lstm.forward(bag).hidden;
        let (m, h) = hidden.dim();
        Ok((0..m)
            .map(|t| {
                let mut flat = Array2::zeros((1, m * h));
                flat.row_mut(0)
                    .slice_mut(ndarray::s![t * h..(t + 1) * h])
                    .assign(&hidden.row(t));
                let acts = self.head_forward(flat);
                mean_pool(acts.last().expect("output present").row(0).as_slice().expect("contiguous"))
            })
            .collect())
    }

    fn output_scale(&self) -> f64 {
        self.output_scale
    }

    fn set_output_scale(&mut self, scale: f64) {
        self.output_scale = scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deepmil::dense::sigmoid;
    use engage_mil_oracles::central_differences;
    use rand::Rng;

    fn bag(m: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_net_outputs_sigmoid_of_bias() {
        let mut net = SeqNet::new(3, 5, 4, &[6, 4], 0).unwrap();
        net.lstm.weights.fill(0.0);
        for layer in &mut net.head {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        net.head.last_mut().unwrap().bias.fill(1.2);
        assert_eq!(net.score(bag(5, 3, 1).view()).unwrap(), sigmoid(1.2));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let net = SeqNet::new(3, 4, 5, &[6, 4], 7).unwrap();
        let x = bag(4, 3, 8);
        let (_, grad) = net.loss_and_grad(x.view(), 0.3).unwrap();
        let mut probe = net.clone();
        let numeric = central_differences(
            |p| {
                probe.set_flat_params(p);
                let s = probe.score(x.view()).unwrap();
                (s - 0.3) * (s - 0.3)
            },
            &net.flat_params(),
            1e-6,
        );
        for (a, n) in grad.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-5);
            assert!(rel < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn segment_order_changes_the_score() {
        let net = SeqNet::standard(4, 6, 3).unwrap();
        let x = bag(6, 4, 9);
        let mut rev = x.clone();
        rev.invert_axis(ndarray::Axis(0));
        assert_ne!(net.score(x.view()).unwrap(), net.score(rev.as_standard_layout().view()).unwrap());
    }

    #[test]
    fn requires_exact_segment_count() {
        let net = SeqNet::standard(4, 6, 3).unwrap();
        assert!(matches!(
            net.score(bag(5, 4, 0).view()),
            Err(DeepMilError::DimensionMismatch { .. })
        ));
        assert_eq!(net.localize(bag(6, 4, 0).view()).unwrap().len(), 6);
    }
}
