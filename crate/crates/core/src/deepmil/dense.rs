use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `a = act(x W^T + b)` applied to the rows of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `outputs x inputs`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Weights uniform in `+-1/sqrt(inputs)`, zero bias.
    pub fn new<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        DenseLayer {
            weights: Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z.mapv_inplace(|v| self.activation.apply(v));
        z
    }

    /// Accumulates the weight and bias gradients into `grad_w` (row-major,
    /// `outputs x inputs`) and `grad_b`, and returns the gradient with
    /// respect to `x`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        out: ArrayView2<f64>,
        d_out: ArrayView2<f64>,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Array2<f64> {
        let act = self.activation;
        let mut dz = d_out.to_owned();
        dz.zip_mut_with(&out, |d, &a| *d *= act.derivative_from_output(a));
        let dw = dz.t().dot(&x);
        for (g, v) in grad_w.iter_mut().zip(dw.iter()) {
            *g += v;
        }
        for (g, v) in grad_b.iter_mut().zip(dz.sum_axis(Axis(0)).iter()) {
            *g += v;
        }
        dz.dot(&self.weights)
    }

    pub(crate) fn blocks(&self) -> [&[f64]; 2] {
        [
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use engage_mil_oracles::central_differences;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn zero_layer_outputs_activated_bias() {
        let mut layer = DenseLayer::zeros(3, 2, Activation::Sigmoid);
        layer.bias = array![0.0, 2.0];
        let out = layer.forward(array![[1.0, 2.0, 3.0]].view());
        assert_eq!(out[[0, 0]], 0.5);
        assert_eq!(out[[0, 1]], sigmoid(2.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for act in [Activation::Sigmoid, Activation::Linear] {
            let layer = DenseLayer::new(4, 3, act, &mut rng);
            let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
            let c = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
            // Loss = sum(c * out).
            let out = layer.forward(x.view());
            let mut gw = vec![0.0; 12];
            let mut gb = vec![0.0; 3];
            let dx = layer.backward(x.view(), out.view(), c.view(), &mut gw, &mut gb);
            let params: Vec<f64> = layer.blocks().concat();
            let numeric = central_differences(
                |p| {
                    let mut l = layer.clone();
                    l.weights.as_slice_mut().unwrap().copy_from_slice(&p[..12]);
                    l.bias.as_slice_mut().unwrap().copy_from_slice(&p[12..]);
                    (l.forward(x.view()) * &c).sum()
                },
                &params,
                1e-6,
            );
            let analytic: Vec<f64> = gw.iter().chain(&gb).copied().collect();
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() < 1e-7, "{act:?}: {a} vs {n}");
            }
            let numeric_x = central_differences(
                |v| {
                    let xv = Array2::from_shape_vec((5, 4), v.to_vec()).unwrap();
                    (layer.forward(xv.view()) * &c).sum()
                },
                x.as_slice().unwrap(),
                1e-6,
            );
            for (a, n) in dx.iter().zip(&numeric_x) {
                assert!((a - n).abs() < 1e-7);
            }
        }
    }
}
