//! Planted-signal bags with known per-instance intensities.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Bag, DataError, Dataset, Result};
use crate::features::FeatureKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub subjects: usize,
    /// Total number of videos; video `v` belongs to subject `v % subjects`.
    pub videos: usize,
    pub instances_per_bag: usize,
    pub dim: usize,
    /// Share of videos per level `0..=3`.
    pub class_distribution: [f64; crate::LEVELS],
    /// Fraction of a bag's instances carrying the class signal.
    pub signal_fraction: f64,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise_scale: f64,
    /// Signal length per unit of level.
    pub signal_gain: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Shaped like the reference recording campaign: 195 videos from 78
    /// subjects, levels in the proportions 9 : 53 : 82 : 50. Those four
    /// counts add up to 194, so 195 videos come out as 9 / 53 / 83 / 50.
    fn default() -> Self {
        SyntheticSpec {
            subjects: 78,
            videos: 195,
            instances_per_bag: 100,
            dim: 9,
            class_distribution: [9.0 / 194.0, 53.0 / 194.0, 82.0 / 194.0, 50.0 / 194.0],
            signal_fraction: 0.3,
            noise_scale: 0.5,
            signal_gain: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::InvalidInput(format!("synthetic spec: {m}")));
        if self.subjects == 0 || self.videos < self.subjects {
            return bad("need at least one video per subject");
        }
        if self.instances_per_bag == 0 || self.dim == 0 {
            return bad("instances per bag and dim must be positive");
        }
        let total: f64 = self.class_distribution.iter().sum();
        if self.class_distribution.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return bad("class distribution must be non-negative and sum to 1");
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad("signal fraction must be in (0, 1]");
        }
        if !(self.noise_scale >= 0.0 && self.signal_gain.is_finite()) {
            return bad("noise scale must be >= 0 and gain finite");
        }
        Ok(())
    }

    /// Videos per level by largest remainder, summing to `videos`.
    pub fn class_counts(&self) -> [usize; crate::LEVELS] {
        let exact: Vec<f64> = self
            .class_distribution
            .iter()
            .map(|p| p * self.videos as f64)
            .collect();
        let mut counts: [usize; crate::LEVELS] = std::array::from_fn(|l| (exact[l] + 1e-9).floor() as usize);
        let mut order: Vec<usize> = (0..crate::LEVELS).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - counts[a] as f64;
            let rb = exact[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let missing = self.videos.saturating_sub(counts.iter().sum::<usize>());
        for &l in order.iter().take(missing) {
            counts[l] += 1;
        }
        counts
    }

    /// Number of signal-carrying instances per bag.
    pub fn signal_count(&self) -> usize {
        ((self.signal_fraction * self.instances_per_bag as f64).round() as usize)
            .clamp(1, self.instances_per_bag)
    }
}

/// Ground-truth intensity of every instance, bag by bag.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedIntensities {
    pub video_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Unit direction per level; orthonormal when `dim >= 4`.
fn class_directions(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(crate::LEVELS);
    for _ in 0..crate::LEVELS {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if dim >= crate::LEVELS {
            for d in &dirs {
                let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        dirs.push(v.iter().map(|a| a / norm).collect());
    }
    dirs
}

/// Generates a dataset in which a contiguous run of
/// `round(signal_fraction * M)` instances of each bag carries
/// `signal_gain * label * direction[label]` on top of Gaussian noise. The
/// planted intensity of an instance is its bag label inside the run and 0
/// elsewhere.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<(Dataset, PlantedIntensities)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = class_directions(spec.dim, &mut rng);

    let counts = spec.class_counts();
    let mut labels: Vec<u8> = counts
        .iter()
        .enumerate()
        .flat_map(|(l, &c)| std::iter::repeat_n(l as u8, c))
        .collect();
    labels.shuffle(&mut rng);

    let (m, d) = (spec.instances_per_bag, spec.dim);
    let run = spec.signal_count();
    let mut bags = Vec::with_capacity(spec.videos);
    let mut planted = PlantedIntensities {
        video_ids: Vec::with_capacity(spec.videos),
        values: Vec::with_capacity(spec.videos),
    };
    for (v, &label) in labels.iter().enumerate() {
        let start = rng.random_range(0..=m - run);
        let mut x = Array2::<f64>::zeros((m, d));
        let mut truth = vec![0.0; m];
        for j in 0..m {
            let carries = (start..start + run).contains(&j);
            for k in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let signal = if carries {
                    spec.signal_gain * label as f64 * dirs[label as usize][k]
                } else {
                    0.0
                };
                x[[j, k]] = signal + spec.noise_scale * noise;
            }
            if carries {
                truth[j] = label as f64;
            }
        }
        let video_id = format!("v{v:04}");
        let subject_id = format!("s{:03}", v % spec.subjects);
        planted.video_ids.push(video_id.clone());
        planted.values.push(truth);
        bags.push(Bag::new(video_id, subject_id, x, label)?);
    }
    Ok((Dataset::new(bags, FeatureKind::Synthetic)?, planted))
}
