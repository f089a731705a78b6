//! Lloyd's k-means with distance-weighted seeding.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squares after seeding and after each
    /// reassignment; non-increasing.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("trace has the seeding entry")
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid of every point (lowest index on ties) and its squared
/// distance.
fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            centroids
                .outer_iter()
                .enumerate()
                .map(|(c, centroid)| (c, sq_dist(p, centroid)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        })
        .collect()
}

fn seed_centroids(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if dist[pick] == 0.0 {
                pick = dist.iter().rposition(|&d| d > 0.0).expect("total > 0");
            }
            pick
        } else {
            // Only duplicates of chosen points remain.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select(Axis(0), &chosen)
}

/// Recomputes centroids as member means. An empty cluster is moved onto
/// the point farthest from its current centroid, which is then assigned
/// to it. Returns whether any cluster was re-seeded.
fn update(
    points: ArrayView2<f64>,
    labels: &mut [usize],
    dists: &[f64],
    centroids: &mut Array2<f64>,
) -> bool {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        sums.row_mut(c).scaled_add(1.0, &points.row(i));
        counts[c] += 1;
    }
    let mut taken = vec![false; points.nrows()];
    let mut reseeded = false;
    for c in 0..k {
        if counts[c] > 0 {
            let mean = &sums.row(c) / counts[c] as f64;
            centroids.row_mut(c).assign(&mean);
        } else {
            let far = (0..points.nrows())
                .filter(|&i| !taken[i])
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .expect("k <= n leaves a free point");
            taken[far] = true;
            labels[far] = c;
            centroids.row_mut(c).assign(&points.row(far));
            reseeded = true;
        }
    }
    reseeded
}

pub fn kmeans(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(points, k, seed, &KMeansConfig::default())
}

/// Clusters the rows of `points` into `k` groups.
///
/// Stops when assignments no longer change or after `max_iter` updates.
/// On return every centroid is the mean of its assigned points.
pub fn kmeans_with(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(DataError::InvalidK(format!("k = {k} with {n} points")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(DataError::InvalidInput("non-finite point coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let first = assign(points, &centroids);
    let mut labels: Vec<usize> = first.iter().map(|a| a.0).collect();
    let mut dists: Vec<f64> = first.iter().map(|a| a.1).collect();
    let mut inertia_trace = vec![dists.iter().sum()];
    let mut converged = false;

    for _ in 0..config.max_iter {
        let reseeded = update(points, &mut labels, &dists, &mut centroids);
        let next = assign(points, &centroids);
        let changed = next.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        labels = next.iter().map(|a| a.0).collect();
        dists = next.iter().map(|a| a.1).collect();
        inertia_trace.push(dists.iter().sum());
        if !changed && !reseeded {
            converged = true;
            break;
        }
    }
    if !converged {
        update(points, &mut labels, &dists, &mut centroids);
    }
    Ok(KMeansResult {
        assignments: labels,
        centroids,
        inertia_trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn member_means_match(points: ArrayView2<f64>, res: &KMeansResult) {
        for c in 0..res.centroids.nrows() {
            let members: Vec<usize> =
                (0..points.nrows()).filter(|&i| res.assignments[i] == c).collect();
            assert!(!members.is_empty());
            let mean = points.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
            for (a, b) in mean.iter().zip(res.centroids.row(c)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        for i in 0..40 {
            let off = if i < 20 { -50.0 } else { 50.0 };
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            rows.extend([off + a, b]);
        }
        let pts = Array2::from_shape_vec((40, 2), rows).unwrap();
        let res = kmeans(pts.view(), 2, 7).unwrap();
        assert!(res.assignments[..20].iter().all(|&a| a == res.assignments[0]));
        assert!(res.assignments[20..].iter().all(|&a| a == res.assignments[20]));
        assert_ne!(res.assignments[0], res.assignments[20]);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [5.0, 5.0]];
        let res = kmeans(pts.view(), 4, 1).unwrap();
        assert_eq!(res.inertia(), 0.0);
        let distinct: std::collections::BTreeSet<usize> = res.assignments.iter().copied().collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn duplicate_points_with_k_equal_n() {
        let pts = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let res = kmeans(pts.view(), 3, 4).unwrap();
        assert_eq!(res.inertia(), 0.0);
    }

    #[test]
    fn thirty_random_points_k3() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let flat: Vec<f64> = (0..60).map(|_| rng.random::<f64>() * 10.0).collect();
        let pts = Array2::from_shape_vec((30, 2), flat).unwrap();
        let res = kmeans(pts.view(), 3, 99).unwrap();
        assert!(res.converged);
        assert!(res.inertia() <= res.inertia_trace[0]);
        assert!(res.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        member_means_match(pts.view(), &res);
    }

    #[test]
    fn too_many_clusters() {
        let pts = array![[0.0], [1.0]];
        assert!(matches!(kmeans(pts.view(), 3, 0), Err(DataError::InvalidK(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flat: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let pts = Array2::from_shape_vec((100, 3), flat).unwrap();
        assert_eq!(kmeans(pts.view(), 7, 5).unwrap(), kmeans(pts.view(), 7, 5).unwrap());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn lloyd_is_monotone(seed in 0u64..10_000, n in 5usize..60, k in 1usize..6) {
            proptest::prop_assume!(k <= n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Coarse grid values produce ties and duplicates.
            let flat: Vec<f64> = (0..n * 2).map(|_| rng.random_range(0..6) as f64).collect();
            let pts = Array2::from_shape_vec((n, 2), flat).unwrap();
            let res = kmeans(pts.view(), k, seed).unwrap();
            proptest::prop_assert!(res.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            if res.converged {
                for c in 0..k {
                    let members: Vec<usize> = (0..n).filter(|&i| res.assignments[i] == c).collect();
                    if !members.is_empty() {
                        let mean = pts.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
                        for (a, b) in mean.iter().zip(res.centroids.row(c)) {
                            proptest::prop_assert!((a - b).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }
}
