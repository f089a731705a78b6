//! Epsilon-insensitive support vector regression solved by SMO.
//!
//! The dual is written over `2l` variables `beta = [alpha; alpha*]` with
//! signs `y = [+1; -1]`:
//!
//! ```text
//! min 1/2 beta^T Q beta + p^T beta
//! s.t. y^T beta = 0, 0 <= beta_t <= C
//! Q_st = y_s y_t K(s mod l, t mod l),  p = [eps - z; eps + z]
//! ```
//!
//! Each step picks a maximal-violating pair with second-order gain and
//! solves the two-variable subproblem in closed form.

use std::path::{Path, PathBuf};

use log::{debug, warn};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelCache, KernelSpec};
use super::{check_training_set, read_json, write_json, BaselineError, Result};
use crate::features::FeatureKind;

pub const SVR_MAGIC: &[u8; 4] = b"EMSV";
const SVR_VERSION: u32 = 1;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub cache_bytes: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            c: 1.0,
            epsilon: 0.1,
            kernel: KernelSpec::gaussian(1.0),
            tol: 1e-3,
            max_iter: 10_000_000,
            cache_bytes: 256 << 20,
        }
    }
}

impl SvrConfig {
    /// Grid optimum reported for mode relabeling: `(C, sigma) = (1, 1)`.
    pub fn mode_preset() -> Self {
        SvrConfig::default()
    }

    /// Grid optimum reported for mean relabeling: `(C, sigma) = (1, 4)`.
    pub fn mean_preset() -> Self {
        SvrConfig {
            kernel: KernelSpec::gaussian(4.0),
            ..SvrConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(BaselineError::InvalidInput(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(BaselineError::InvalidInput(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(BaselineError::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if !self.kernel.is_valid() {
            return Err(BaselineError::InvalidInput(format!(
                "kernel bandwidth must be > 0, got {}",
                self.kernel.sigma()
            )));
        }
        Ok(())
    }
}

/// Support vectors with nonzero `alpha - alpha*`, and the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub support_vectors: Array2<f64>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub config: SvrConfig,
}

/// Solver outcome besides the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrFit {
    pub model: SvrModel,
    /// `alpha_i - alpha*_i` for every training point.
    pub dual_coef: Vec<f64>,
    /// Dual objective (maximization form) after initialization and after
    /// every pair update.
    pub dual_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Maximal KKT violation at exit.
    pub kkt_gap: f64,
}

impl SvrFit {
    pub fn dual_objective(&self) -> f64 {
        *self.dual_trace.last().expect("trace has the initial entry")
    }
}

struct Solver<'a> {
    cache: KernelCache<'a>,
    diag: Vec<f64>,
    p: Vec<f64>,
    beta: Vec<f64>,
    grad: Vec<f64>,
    c: f64,
    l: usize,
}

fn sign(t: usize, l: usize) -> f64 {
    if t < l {
        1.0
    } else {
        -1.0
    }
}

/// Variables that may move up along `y` (`I_up` in the KKT conditions).
fn in_up(t: usize, l: usize, beta: &[f64], c: f64) -> bool {
    if t < l {
        beta[t] < c
    } else {
        beta[t] > 0.0
    }
}

fn in_low(t: usize, l: usize, beta: &[f64], c: f64) -> bool {
    if t < l {
        beta[t] > 0.0
    } else {
        beta[t] < c
    }
}

impl Solver<'_> {
    /// Half of `beta^T (grad + p)` is the primal-form objective.
    fn objective(&self) -> f64 {
        0.5 * self
            .beta
            .iter()
            .zip(&self.grad)
            .zip(&self.p)
            .map(|((b, g), p)| b * (g + p))
            .sum::<f64>()
    }

    /// Second-order working-set selection. Returns `None` once the
    /// violation `Gmax + Gmax2` is below `tol`, together with that gap.
    fn select(&mut self, tol: f64) -> (Option<(usize, usize)>, f64) {
        let Solver {
            cache,
            diag,
            beta,
            grad,
            c,
            l,
            ..
        } = self;
        let (l, c) = (*l, *c);
        let n = 2 * l;
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(t, l, beta, c) {
                let v = -sign(t, l) * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            return (None, 0.0);
        }
        let ri = i % l;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        let (ki, _) = cache.rows(ri, ri);
        for t in 0..n {
            if !in_low(t, l, beta, c) {
                continue;
            }
            let yg = sign(t, l) * grad[t];
            gmax2 = gmax2.max(yg);
            let b = gmax + yg;
            if b > 0.0 {
                let rt = t % l;
                let a = diag[ri] + diag[rt] - 2.0 * ki[rt];
                let a = if a > 0.0 { a } else { TAU };
                let gain = -(b * b) / a;
                if gain <= best {
                    best = gain;
                    j = t;
                }
            }
        }
        let gap = gmax + gmax2;
        if gap < tol || j == usize::MAX {
            (None, gap)
        } else {
            (Some((i, j)), gap)
        }
    }

    fn update(&mut self, i: usize, j: usize) {
        let l = self.l;
        let (ri, rj) = (i % l, j % l);
        let (yi, yj) = (sign(i, l), sign(j, l));
        let c = self.c;
        let (old_i, old_j) = (self.beta[i], self.beta[j]);
        let qij = yi * yj * self.cache.rows(ri, rj).0[rj];
        let (mut ai, mut aj) = (old_i, old_j);
        if yi != yj {
            let quad = self.diag[ri] + self.diag[rj] + 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = self.diag[ri] + self.diag[rj] - 2.0 * qij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.beta[i] = ai;
        self.beta[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        let (ki, kj) = self.cache.rows(ri, rj);
        let grad = &mut self.grad;
        // grad_t += Q_ti di + Q_tj dj, with Q_ts = y_t y_s K.
        let (si, sj) = (yi * di, yj * dj);
        for r in 0..l {
            let step = ki[r] * si + kj[r] * sj;
            grad[r] += step;
            grad[r + l] -= step;
        }
    }

    /// `rho` from free variables, or the midpoint of the feasible interval
    /// when every variable sits at a bound.
    fn rho(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free_sum, mut free) = (0.0, 0usize);
        for t in 0..2 * self.l {
            let y = sign(t, self.l);
            let yg = y * self.grad[t];
            if self.beta[t] >= self.c {
                if y < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.beta[t] <= 0.0 {
                if y > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        if free > 0 {
            free_sum / free as f64
        } else {
            0.5 * (ub + lb)
        }
    }
}

/// Trains epsilon-SVR on the rows of `x` with targets `y`.
pub fn svr_train(x: ArrayView2<f64>, y: &[f64], config: &SvrConfig) -> Result<SvrFit> {
    config.validate()?;
    check_training_set(x, y, 2)?;
    let l = y.len();
    let cache = KernelCache::new(x, config.kernel, config.cache_bytes);
    let diag = cache.diagonal();
    let p: Vec<f64> = (0..2 * l)
        .map(|t| {
            if t < l {
                config.epsilon - y[t]
            } else {
                config.epsilon + y[t - l]
            }
        })
        .collect();
    let mut solver = Solver {
        cache,
        diag,
        grad: p.clone(),
        p,
        beta: vec![0.0; 2 * l],
        c: config.c,
        l,
    };
    let mut dual_trace = vec![-solver.objective()];
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt_gap = f64::INFINITY;
    while iterations < config.max_iter {
        let (pair, gap) = solver.select(config.tol);
        kkt_gap = gap;
        let Some((i, j)) = pair else {
            converged = true;
            break;
        };
        solver.update(i, j);
        dual_trace.push(-solver.objective());
        iterations += 1;
    }
    if !converged {
        warn!("SMO stopped after {iterations} iterations with KKT gap {kkt_gap:.3e}");
    }
    let bias = -solver.rho();
    let dual_coef: Vec<f64> = (0..l).map(|i| solver.beta[i] - solver.beta[i + l]).collect();
    let support: Vec<usize> = (0..l).filter(|&i| dual_coef[i] != 0.0).collect();
    debug!(
        "SMO: {iterations} iterations, {} support vectors of {l}, gap {kkt_gap:.3e}",
        support.len()
    );
    let model = SvrModel {
        support_vectors: x.select(ndarray::Axis(0), &support),
        coef: support.iter().map(|&i| dual_coef[i]).collect(),
        bias,
        config: *config,
    };
    Ok(SvrFit {
        model,
        dual_coef,
        dual_trace,
        iterations,
        converged,
        kkt_gap,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SvrSidecar {
    model: String,
    feature_kind: FeatureKind,
    dim: usize,
    support_vectors: usize,
    config: SvrConfig,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl SvrModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(BaselineError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self
            .support_vectors
            .outer_iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * self.config.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// Predictions for every row, evaluated in parallel.
    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        (0..x.nrows()).into_par_iter().map(|i| self.predict(x.row(i))).collect()
    }

    /// Writes the binary model to `path` and a JSON description to
    /// `<path>.json`.
    ///
    /// Binary layout (little-endian): `b"EMSV"`, version `u32`, support
    /// vector count `u32`, dimension `u32`, then `C`, `epsilon`, `sigma`,
    /// `tol` and `bias` as `f64`, the support vectors as row-major `f32`
    /// and the coefficients as `f64`.
    pub fn save(&self, path: &Path, feature_kind: FeatureKind) -> Result<()> {
        let (n, d) = self.support_vectors.dim();
        let mut buf = Vec::with_capacity(16 + 40 + 4 * n * d + 8 * n);
        buf.extend_from_slice(SVR_MAGIC);
        for v in [SVR_VERSION, n as u32, d as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let cfg = &self.config;
        for v in [cfg.c, cfg.epsilon, cfg.kernel.sigma(), cfg.tol, self.bias] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.support_vectors.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in &self.coef {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|source| BaselineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        write_json(
            &sidecar_path(path),
            &SvrSidecar {
                model: "svr".into(),
                feature_kind,
                dim: d,
                support_vectors: n,
                config: *cfg,
            },
        )
    }

    /// Reads a model written by [`SvrModel::save`] along with the feature
    /// kind recorded in its sidecar.
    pub fn load(path: &Path) -> Result<(SvrModel, FeatureKind)> {
        let bad = |m: &str| BaselineError::Format {
            path: path.to_path_buf(),
            message: m.into(),
        };
        let bytes = std::fs::read(path).map_err(|source| BaselineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() < 56 || &bytes[..4] != SVR_MAGIC {
            return Err(bad("not an SVR model file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        if u32_at(4) != SVR_VERSION {
            return Err(bad("unsupported SVR model version"));
        }
        let (n, d) = (u32_at(8) as usize, u32_at(12) as usize);
        if bytes.len() != 56 + 4 * n * d + 8 * n {
            return Err(bad("SVR model file has the wrong length"));
        }
        let sidecar: SvrSidecar = read_json(&sidecar_path(path))?;
        if sidecar.dim != d || sidecar.support_vectors != n {
            return Err(bad("sidecar disagrees with the binary model"));
        }
        let sv_end = 56 + 4 * n * d;
        let sv: Vec<f64> = bytes[56..sv_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let coef: Vec<f64> = bytes[sv_end..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let config = SvrConfig {
            c: f64_at(16),
            epsilon: f64_at(24),
            kernel: KernelSpec::gaussian(f64_at(32)),
            tol: f64_at(40),
            ..sidecar.config
        };
        let model = SvrModel {
            support_vectors: Array2::from_shape_vec((n, d), sv).expect("length checked"),
            coef,
            bias: f64_at(48),
            config,
        };
        Ok((model, sidecar.feature_kind))
    }
}
