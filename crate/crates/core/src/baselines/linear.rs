use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, read_json, write_json, BaselineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    /// Weight of `|w|^2` in the objective.
    pub penalty: f64,
    pub epochs: usize,
    /// Initial step; step `t` (counted over samples) is
    /// `eta0 / (1 + eta0 * penalty * t)`.
    pub eta0: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            penalty: 1e-4,
            epochs: 100,
            eta0: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub penalty: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize, penalty: f64) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            penalty,
        }
    }

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

    /// `(1/n) sum (w.x + b - y)^2 + penalty |w|^2`
    pub fn objective(&self, x: ArrayView2<f64>, y: &[f64]) -> f64 {
        let sse: f64 = x
            .outer_iter()
            .zip(y)
            .map(|(r, t)| {
                let e = self.weights.iter().zip(r).map(|(w, v)| w * v).sum::<f64>() + self.bias - t;
                e * e
            })
            .sum();
        sse / y.len() as f64 + self.penalty * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdFit {
    pub model: LinearModel,
    /// Training objective at the end of every epoch.
    pub loss_trace: Vec<f64>,
}

/// Squared-loss linear regression with an L2 penalty, trained by
/// per-sample stochastic gradient steps over seeded shuffles.
pub fn sgd_linear_train(x: ArrayView2<f64>, y: &[f64], config: &SgdConfig) -> Result<SgdFit> {
    check_training_set(x, y, 1)?;
    if !(config.eta0 > 0.0 && config.penalty >= 0.0) {
        return Err(BaselineError::InvalidInput(format!(
            "need eta0 > 0 and penalty >= 0, got {} and {}",
            config.eta0, config.penalty
        )));
    }
    let mut model = LinearModel::zeros(x.ncols(), config.penalty);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut t = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = config.eta0 / (1.0 + config.eta0 * config.penalty * t as f64);
            let row = x.row(i);
            let e = model.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + model.bias
                - y[i];
            for (w, v) in model.weights.iter_mut().zip(row) {
                *w -= eta * (2.0 * e * v + 2.0 * config.penalty * *w);
            }
            model.bias -= eta * 2.0 * e;
            t += 1;
        }
        let loss = model.objective(x, y);
        if !loss.is_finite() {
            return Err(BaselineError::Diverged(format!(
                "SGD loss is not finite after {} epochs; lower eta0",
                loss_trace.len()
            )));
        }
        loss_trace.push(loss);
    }
    Ok(SgdFit { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use engage_mil_oracles::ridge_closed_form;
    use ndarray::Array2;
    use rand::Rng;

    fn system(n: usize, seed: u64, noise: f64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let y = x
            .outer_iter()
            .map(|r| 1.5 * r[0] - 2.0 * r[1] + 0.5 * r[2] + 0.7 + noise * rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn recovers_noiseless_weights() {
        let (x, y) = system(40, 1, 0.0);
        let cfg = SgdConfig {
            penalty: 0.0,
            epochs: 3000,
            eta0: 0.05,
            seed: 3,
        };
        let fit = sgd_linear_train(x.view(), &y, &cfg).unwrap();
        for (w, t) in fit.model.weights.iter().zip([1.5, -2.0, 0.5]) {
            assert!((w - t).abs() < 1e-3, "{w} vs {t}");
        }
        assert!((fit.model.bias - 0.7).abs() < 1e-3);
    }

    #[test]
    fn zero_epochs_returns_zero_model() {
        let (x, y) = system(5, 0, 0.1);
        let fit = sgd_linear_train(x.view(), &y, &SgdConfig { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(fit.model, LinearModel::zeros(3, 1e-4));
        assert!(fit.loss_trace.is_empty());
    }

    #[test]
    fn matches_closed_form_ridge() {
        for seed in 0..5 {
            let (x, y) = system(20, 10 + seed, 0.3);
            let lambda = 0.05;
            let cfg = SgdConfig {
                penalty: lambda,
                epochs: 20_000,
                eta0: 0.01,
                seed,
            };
            let fit = sgd_linear_train(x.view(), &y, &cfg).unwrap();
            let rows: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
            let (w, b) = ridge_closed_form(&rows, &y, lambda);
            for (a, e) in fit.model.weights.iter().zip(&w) {
                assert!((a - e).abs() < 1e-3, "seed {seed}: {a} vs {e}");
            }
            assert!((fit.model.bias - b).abs() < 1e-3);
            let optimum = LinearModel { weights: w, bias: b, penalty: lambda }.objective(x.view(), &y);
            let ours = *fit.loss_trace.last().unwrap();
            assert!(ours <= optimum * 1.01 && ours >= optimum - 1e-12);
        }
    }

    #[test]
    fn oversized_step_reports_divergence() {
        let (x, y) = system(20, 5, 0.1);
        let cfg = SgdConfig { eta0: 1e200, penalty: 0.0, epochs: 5, seed: 0 };
        assert!(matches!(sgd_linear_train(x.view(), &y, &cfg), Err(BaselineError::Diverged(_))));
    }

    #[test]
    fn loss_trace_decreases_on_average() {
        let (x, y) = system(60, 4, 0.2);
        let fit = sgd_linear_train(x.view(), &y, &SgdConfig { epochs: 50, ..Default::default() }).unwrap();
        let first: f64 = fit.loss_trace[..10].iter().sum();
        let last: f64 = fit.loss_trace[40..].iter().sum();
        assert!(last < first);
    }

    #[test]
    fn same_seed_same_model_and_json_round_trip() {
        let (x, y) = system(30, 2, 0.1);
        let cfg = SgdConfig { epochs: 5, seed: 9, ..Default::default() };
        let a = sgd_linear_train(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, sgd_linear_train(x.view(), &y, &cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lin.json");
        a.model.save(&path).unwrap();
        assert_eq!(LinearModel::load(&path).unwrap(), a.model);
    }
}
