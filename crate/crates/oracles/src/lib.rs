//! Slow, direct reference computations for the test suites.
//!
//! Nothing here shares code with `engage-mil`. Every routine is written
//! in the most literal way available (per-voxel loops, full sorts, dense
//! projected-gradient QP, Gaussian elimination) so that agreement with the
//! optimized implementations is meaningful.

use std::f64::consts::PI;

/// Quantization of bilinear weights (fixed point, 16 fractional bits).
const Q: i64 = 1 << 16;

fn transitions(code: u8) -> u32 {
    let mut n = 0;
    for b in 0..8 {
        let cur = (code >> b) & 1;
        let next = (code >> ((b + 1) % 8)) & 1;
        if cur != next {
            n += 1;
        }
    }
    n
}

/// Bin of `code` under the 59-bin uniform mapping, found by counting the
/// uniform codes below it.
pub fn uniform_bin(code: u8) -> usize {
    if transitions(code) > 2 {
        return 58;
    }
    (0..code).filter(|&c| transitions(c) <= 2).count()
}

/// Samples `plane(u, v)` at `(u + cos, v + sin)` of neighbour `b` with
/// 16-bit fixed-point bilinear weights; the result is scaled by `Q * Q`.
fn sample_scaled(plane: &dyn Fn(i64, i64) -> i64, u: i64, v: i64, b: usize) -> i64 {
    let angle = 2.0 * PI * b as f64 / 8.0;
    let mut du = angle.cos();
    let mut dv = angle.sin();
    if (du - du.round()).abs() < 1e-9 {
        du = du.round();
    }
    if (dv - dv.round()).abs() < 1e-9 {
        dv = dv.round();
    }
    let pu = u as f64 + du;
    let pv = v as f64 + dv;
    let u0 = pu.floor();
    let v0 = pv.floor();
    let wu = ((pu - u0) * Q as f64).round() as i64;
    let wv = ((pv - v0) * Q as f64).round() as i64;
    let (u0, v0) = (u0 as i64, v0 as i64);
    let mut acc = 0i64;
    for (cu, wu_c) in [(u0, Q - wu), (u0 + 1, wu)] {
        for (cv, wv_c) in [(v0, Q - wv), (v0 + 1, wv)] {
            let w = wu_c * wv_c;
            if w != 0 {
                acc += w * plane(cu, cv);
            }
        }
    }
    acc
}

fn code_on_plane(plane: &dyn Fn(i64, i64) -> i64, u: i64, v: i64) -> u8 {
    let center = plane(u, v) * Q * Q;
    let mut code = 0u8;
    for b in 0..8 {
        if sample_scaled(plane, u, v, b) >= center {
            code |= 1 << b;
        }
    }
    code
}

/// LBP-TOP by visiting every voxel of a `t x height x width` volume.
///
/// Returns the XY, XT and YT histograms (59 bins each, normalized). XY
/// codes are taken on every frame, XT codes on every row, YT codes on every
/// column; a voxel contributes to a plane when it is interior in both of
/// that plane's axes.
pub fn naive_lbp_top(frames: &[Vec<u8>], width: usize, height: usize) -> [Vec<f64>; 3] {
    let t_len = frames.len();
    let px = |t: i64, y: i64, x: i64| -> i64 {
        frames[t as usize][y as usize * width + x as usize] as i64
    };
    let mut hist = [vec![0u64; 59], vec![0u64; 59], vec![0u64; 59]];
    for t in 0..t_len as i64 {
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let x_in = x >= 1 && x + 1 < width as i64;
                let y_in = y >= 1 && y + 1 < height as i64;
                let t_in = t >= 1 && t + 1 < t_len as i64;
                if x_in && y_in {
                    let plane = |u: i64, v: i64| px(t, v, u);
                    hist[0][uniform_bin(code_on_plane(&plane, x, y))] += 1;
                }
                if x_in && t_in {
                    let plane = |u: i64, v: i64| px(v, y, u);
                    hist[1][uniform_bin(code_on_plane(&plane, x, t))] += 1;
                }
                if y_in && t_in {
                    let plane = |u: i64, v: i64| px(v, u, x);
                    hist[2][uniform_bin(code_on_plane(&plane, y, t))] += 1;
                }
            }
        }
    }
    hist.map(|h| {
        let total: u64 = h.iter().sum();
        h.iter().map(|&c| c as f64 / total as f64).collect()
    })
}

/// Mean of the `k` largest values, via a full descending sort.
pub fn topk_by_sort(values: &[f64], k: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted[..k].iter().sum::<f64>() / k as f64
}

/// Quadratic-weighted kappa from an explicit contingency table of counts.
pub fn kappa_by_table(a: &[usize], b: &[usize], levels: usize) -> f64 {
    let n = a.len() as f64;
    let mut observed = vec![vec![0.0; levels]; levels];
    for (&i, &j) in a.iter().zip(b) {
        observed[i][j] += 1.0 / n;
    }
    let row: Vec<f64> = (0..levels).map(|i| observed[i].iter().sum()).collect();
    let col: Vec<f64> = (0..levels)
        .map(|j| (0..levels).map(|i| observed[i][j]).sum())
        .collect();
    let denom = ((levels - 1) * (levels - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let w = ((i as f64) - (j as f64)).powi(2) / denom;
            num += w * observed[i][j];
            den += w * row[i] * col[j];
        }
    }
    1.0 - num / den
}

/// Pearson correlation with explicit two-pass centered sums.
pub fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Kahan-compensated mean, summed back to front.
pub fn compensated_mean(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for &v in values.iter().rev() {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum / values.len() as f64
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Ridge regression with an unpenalized intercept:
/// minimizes `(1/n) sum (w.x + b - y)^2 + lambda |w|^2`.
pub fn ridge_closed_form(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let d = x[0].len();
    let xm: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut a = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..d {
            rhs[i] += (row[i] - xm[i]) * (t - ym);
            for j in 0..d {
                a[i][j] += (row[i] - xm[i]) * (row[j] - xm[j]);
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += n as f64 * lambda;
    }
    let w = solve_dense(a, rhs);
    let b = ym - w.iter().zip(&xm).map(|(w, m)| w * m).sum::<f64>();
    (w, b)
}

/// Solution of the epsilon-SVR dual found by accelerated projected gradient.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// `alpha_i - alpha*_i` per training point.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Dual objective in maximization form.
    pub dual_objective: f64,
}

impl QpSolution {
    pub fn predict(&self, kernel_row: &[f64]) -> f64 {
        self.coef.iter().zip(kernel_row).map(|(c, k)| c * k).sum::<f64>() + self.bias
    }
}

/// Projects `v` onto `{0 <= x <= c, sum(sign * x) = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], sign: &[f64], c: f64) -> Vec<f64> {
    let eval = |lam: f64| -> f64 {
        v.iter()
            .zip(sign)
            .map(|(&vi, &s)| s * (vi - lam * s).clamp(0.0, c))
            .sum()
    };
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    v.iter()
        .zip(sign)
        .map(|(&vi, &s)| (vi - lam * s).clamp(0.0, c))
        .collect()
}

/// Dense epsilon-SVR dual solved without any decomposition.
///
/// Variables are `[alpha; alpha*]`, minimizing
/// `1/2 b^T Q b + p^T b` with `Q = [[K, -K], [-K, K]]`,
/// `p = [eps - z; eps + z]` subject to the box and `sum alpha = sum alpha*`.
pub fn svr_dual_qp(kernel: &[Vec<f64>], targets: &[f64], c: f64, eps: f64) -> QpSolution {
    let l = targets.len();
    let n = 2 * l;
    let sign: Vec<f64> = (0..n).map(|t| if t < l { 1.0 } else { -1.0 }).collect();
    let p: Vec<f64> = (0..n)
        .map(|t| if t < l { eps - targets[t] } else { eps + targets[t - l] })
        .collect();
    let grad = |beta: &[f64]| -> Vec<f64> {
        let coef: Vec<f64> = (0..l).map(|i| beta[i] - beta[i + l]).collect();
        let kc: Vec<f64> = (0..l)
            .map(|i| (0..l).map(|j| kernel[i][j] * coef[j]).sum())
            .collect();
        (0..n)
            .map(|t| if t < l { kc[t] + p[t] } else { -kc[t - l] + p[t] })
            .collect()
    };
    let lipschitz = 2.0
        * kernel
            .iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; n];
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    for _ in 0..2_000_000 {
        let g = grad(&y);
        let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let next = project(&trial, &sign, c);
        let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let delta: f64 = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // Restart momentum when it stops helping.
        let restart = next
            .iter()
            .zip(&x)
            .zip(&g)
            .map(|((a, b), gi)| gi * (a - b))
            .sum::<f64>()
            > 0.0;
        if restart {
            y = next.clone();
            momentum = 1.0;
        } else {
            y = next
                .iter()
                .zip(&x)
                .map(|(a, b)| a + (momentum - 1.0) / m_next * (a - b))
                .collect();
            momentum = m_next;
        }
        x = next;
        if delta < 1e-14 {
            break;
        }
    }
    let g = grad(&x);
    let objective: f64 = 0.5
        * x.iter()
            .zip(&g)
            .zip(&p)
            .map(|((b, gi), pi)| b * (gi - pi))
            .sum::<f64>()
        + x.iter().zip(&p).map(|(b, pi)| b * pi).sum::<f64>();

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let tol = 1e-9 * c.max(1.0);
    for t in 0..n {
        let yg = sign[t] * g[t];
        if x[t] >= c - tol {
            if sign[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if x[t] <= tol {
            if sign[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        0.5 * (ub + lb)
    };
    QpSolution {
        coef: (0..l).map(|i| x[i] - x[i + l]).collect(),
        bias: -rho,
        dual_objective: -objective,
    }
}

/// Gaussian kernel matrix `exp(-|a-b|^2 / (2 sigma^2))`.
pub fn gaussian_kernel_matrix(points: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        })
        .collect()
}

/// Central finite differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}
