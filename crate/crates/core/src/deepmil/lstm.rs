use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use super::dense::sigmoid;

/// Single-layer LSTM over the rows of a bag, in row order.
///
/// Gate pre-activations are `W [x_t; h_{t-1}] + b` with the `4H` rows of
/// `W` grouped as input, forget, output and candidate gates.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4H x (D + H)`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Forward quantities kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// Activated gates per step, `M x 4H` in `i, f, o, g` order.
    pub gates: Array2<f64>,
    /// Cell states, `M x H`.
    pub cells: Array2<f64>,
    /// Hidden states, `M x H`.
    pub hidden: Array2<f64>,
}

impl LstmLayer {
    /// Weights uniform in `+-1/sqrt(D + H)`, zero bias.
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((inputs + hidden) as f64).sqrt();
        LstmLayer {
            weights: Array2::from_shape_fn((4 * hidden, inputs + hidden), |_| {
                rng.random_range(-bound..bound)
            }),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        LstmLayer {
            weights: Array2::zeros((4 * hidden, inputs + hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols() - self.hidden()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> LstmTrace {
        let (m, d) = x.dim();
        let h = self.hidden();
        let w_x = self.weights.slice(s![.., ..d]);
        let w_h = self.weights.slice(s![.., d..]);
        let mut pre = x.dot(&w_x.t());
        pre += &self.bias;
        let mut gates = Array2::zeros((m, 4 * h));
        let mut cells = Array2::zeros((m, h));
        let mut hidden = Array2::zeros((m, h));
        let mut h_prev = Array1::<f64>::zeros(h);
        let mut c_prev = Array1::<f64>::zeros(h);
        for t in 0..m {
            let z = &pre.row(t) + &w_h.dot(&h_prev);
            let mut g_row = gates.row_mut(t);
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let o = sigmoid(z[2 * h + k]);
                let g = z[3 * h + k].tanh();
                g_row[k] = i;
                g_row[h + k] = f;
                g_row[2 * h + k] = o;
                g_row[3 * h + k] = g;
                let c = f * c_prev[k] + i * g;
                cells[[t, k]] = c;
                hidden[[t, k]] = o * c.tanh();
            }
            h_prev.assign(&hidden.row(t));
            c_prev.assign(&cells.row(t));
        }
        LstmTrace {
            gates,
            cells,
            hidden,
        }
    }

    /// Backpropagation through time given `d_hidden = dL/dh_t` for every
    /// step. Accumulates into `grad_w` (row-major) and `grad_b`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        trace: &LstmTrace,
        d_hidden: ArrayView2<f64>,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) {
        let (m, d) = x.dim();
        let h = self.hidden();
        let w_h = self.weights.slice(s![.., d..]);
        let mut dz_all = Array2::<f64>::zeros((m, 4 * h));
        let mut dh_next = Array1::<f64>::zeros(h);
        let mut dc_next = Array1::<f64>::zeros(h);
        for t in (0..m).rev() {
            let gates = trace.gates.row(t);
            let mut dz = dz_all.row_mut(t);
            for k in 0..h {
                let (i, f, o, g) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let c = trace.cells[[t, k]];
                let c_prev = if t > 0 { trace.cells[[t - 1, k]] } else { 0.0 };
                let tanh_c = c.tanh();
                let dh = d_hidden[[t, k]] + dh_next[k];
                let d_o = dh * tanh_c;
                let dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + k] = d_o * o * (1.0 - o);
                dz[3 * h + k] = dc * i * (1.0 - g * g);
                dc_next[k] = dc * f;
            }
            dh_next = dz.dot(&w_h);
        }
        // dW = dZ^T [X | H_prev]
        let mut inputs = Array2::<f64>::zeros((m, d + h));
        inputs.slice_mut(s![.., ..d]).assign(&x);
        if m > 1 {
            inputs
                .slice_mut(s![1.., d..])
                .assign(&trace.hidden.slice(s![..m - 1, ..]));
        }
        let dw = dz_all.t().dot(&inputs);
        for (g, v) in grad_w.iter_mut().zip(dw.iter()) {
            *g += v;
        }
        for (g, v) in grad_b.iter_mut().zip(dz_all.sum_axis(ndarray::Axis(0)).iter()) {
            *g += v;
        }
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
