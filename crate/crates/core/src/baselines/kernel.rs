use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(-|a - b|^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian { sigma }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => sigma,
        }
    }

    pub fn is_valid(&self) -> bool {
        let s = self.sigma();
        s > 0.0 && s.is_finite()
    }

    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

/// Kernel rows of a training set, computed on demand and kept in a
/// least-recently-used cache bounded in bytes.
pub struct KernelCache<'a> {
    points: ArrayView2<'a, f64>,
    kernel: KernelSpec,
    rows: Vec<Option<Box<[f64]>>>,
    last_use: Vec<u64>,
    resident: Vec<usize>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    pub fn new(points: ArrayView2<'a, f64>, kernel: KernelSpec, cache_bytes: usize) -> Self {
        let n = points.nrows();
        let capacity = (cache_bytes / (8 * n.max(1))).clamp(2, n.max(2));
        KernelCache {
            points,
            kernel,
            rows: vec![None; n],
            last_use: vec![0; n],
            resident: Vec::new(),
            capacity,
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.points.outer_iter().map(|p| self.kernel.eval(p, p)).collect()
    }

    fn ensure(&mut self, index: usize, pinned: Option<usize>) {
        self.clock += 1;
        self.last_use[index] = self.clock;
        if self.rows[index].is_some() {
            return;
        }
        if self.resident.len() >= self.capacity {
            let (slot, &victim) = self
                .resident
                .iter()
                .enumerate()
                .filter(|(_, &r)| Some(r) != pinned)
                .min_by_key(|(_, &r)| self.last_use[r])
                .expect("capacity is at least 2");
            self.rows[victim] = None;
            self.resident.swap_remove(slot);
        }
        let p = self.points.row(index);
        let row: Box<[f64]> = self
            .points
            .outer_iter()
            .map(|q| self.kernel.eval(p, q))
            .collect();
        self.rows[index] = Some(row);
        self.resident.push(index);
    }

    /// Rows `a` and `b` of the kernel matrix.
    pub fn rows(&mut self, a: usize, b: usize) -> (&[f64], &[f64]) {
        self.ensure(a, None);
        self.ensure(b, Some(a));
        (
            self.rows[a].as_deref().expect("resident"),
            self.rows[b].as_deref().expect("resident"),
        )
    }
}
