use std::path::Path;

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_training_set, read_json, write_json, BaselineError, Result};

/// Lower (and reciprocal upper) clamp of both precisions.
pub const PRECISION_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeConfig {
    pub max_iter: usize,
    /// Stop once both precisions change by less than this, relatively.
    pub tol: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Posterior mean weights with the evidence-maximizing weight precision
/// `alpha` and noise precision `beta`. The intercept is not penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgePosterior {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RidgePosterior {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(BaselineError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.outer_iter().map(|r| self.predict(r)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn clamp_precision(v: f64) -> f64 {
    if v.is_nan() {
        1.0 / PRECISION_FLOOR
    } else {
        v.clamp(PRECISION_FLOOR, 1.0 / PRECISION_FLOOR)
    }
}

/// Bayesian linear regression by evidence maximization.
///
/// Starting from `alpha = beta = 1`, alternates the posterior mean
/// `m = beta (beta X^T X + alpha I)^-1 X^T y` on centred data with
/// `alpha = gamma / |m|^2` and `beta = (n - gamma) / |y - X m|^2`, where
/// `gamma = sum_k beta s_k / (alpha + beta s_k)` over the eigenvalues
/// `s_k` of `X^T X`.
pub fn bayesian_ridge_train(
    x: ArrayView2<f64>,
    y: &[f64],
    config: &RidgeConfig,
) -> Result<RidgePosterior> {
    check_training_set(x, y, 1)?;
    let (n, d) = x.dim();
    let x_mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|t| t - y_mean));

    let eig = SymmetricEigen::new(xc.transpose() * &xc);
    let s: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    // X^T y expressed in the eigenbasis.
    let proj = eig.eigenvectors.transpose() * (xc.transpose() * &yc);

    let (mut alpha, mut beta) = (1.0f64, 1.0f64);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let ratio = alpha / beta;
        let coords = DVector::from_iterator(d, (0..d).map(|k| proj[k] / (s[k] + ratio)));
        let mean = &eig.eigenvectors * coords;
        let gamma: f64 = s.iter().map(|&sk| beta * sk / (alpha + beta * sk)).sum();
        let residual = (&yc - &xc * &mean).norm_squared();
        let next_alpha = clamp_precision(gamma / mean.norm_squared());
        let next_beta = clamp_precision((n as f64 - gamma).max(0.0) / residual);
        let change = ((next_alpha - alpha) / alpha)
            .abs()
            .max(((next_beta - beta) / beta).abs());
        alpha = next_alpha;
        beta = next_beta;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    // Posterior mean at the final precisions.
    let ratio = alpha / beta;
    let coords = DVector::from_iterator(d, (0..d).map(|k| proj[k] / (s[k] + ratio)));
    let mean = if s.iter().all(|&v| v == 0.0) {
        DVector::zeros(d)
    } else {
        &eig.eigenvectors * coords
    };
    debug!("Bayesian ridge: {iterations} iterations, alpha {alpha:.3e}, beta {beta:.3e}");
    let weights: Vec<f64> = mean.iter().copied().collect();
    let bias = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(RidgePosterior {
        weights,
        bias,
        alpha,
        beta,
        iterations,
        converged,
    })
}
