use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Result};

/// How instance labels are derived from weak bag labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelabelStrategy {
    /// Every instance inherits its bag's label.
    #[default]
    Noisy,
    /// Every instance of a cluster gets the most frequent bag label among
    /// the cluster's members; ties go to the smaller label.
    KmeansMode,
    /// Every instance of a cluster gets the mean bag label of its members.
    KmeansMean,
}

impl RelabelStrategy {
    pub fn needs_clusters(self) -> bool {
        !matches!(self, RelabelStrategy::Noisy)
    }
}

/// Real-valued label per instance, bag by bag.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabeling {
    pub labels: Vec<Vec<f64>>,
    pub strategy: RelabelStrategy,
}

impl InstanceLabeling {
    pub fn bag(&self, index: usize) -> &[f64] {
        &self.labels[index]
    }
}

/// Instance labels for `data`. `assignments` lists the cluster of every
/// instance in bag-major order and is required by the k-means strategies.
pub fn relabel(
    data: &Dataset,
    strategy: RelabelStrategy,
    assignments: Option<&[usize]>,
) -> Result<InstanceLabeling> {
    let m = data.instances_per_bag();
    let labels = match strategy {
        RelabelStrategy::Noisy => data
            .bags()
            .iter()
            .map(|b| vec![b.label as f64; m])
            .collect(),
        RelabelStrategy::KmeansMode | RelabelStrategy::KmeansMean => {
            let assignments = assignments.ok_or_else(|| {
                DataError::InvalidInput("cluster relabeling needs assignments".into())
            })?;
            if assignments.len() != data.len() * m {
                return Err(DataError::InvalidInput(format!(
                    "{} assignments for {} instances",
                    assignments.len(),
                    data.len() * m
                )));
            }
            let clusters = assignments.iter().max().map_or(0, |&c| c + 1);
            let mut hist = vec![[0usize; crate::LEVELS]; clusters];
            for (i, &c) in assignments.iter().enumerate() {
                hist[c][data.bags()[i / m].label as usize] += 1;
            }
            let value: Vec<f64> = hist
                .iter()
                .map(|h| match strategy {
                    RelabelStrategy::KmeansMode => {
                        // max_by_key keeps the last maximum; scan from the top.
                        (0..crate::LEVELS).rev().max_by_key(|&l| h[l]).unwrap_or(0) as f64
                    }
                    _ => {
                        let n: usize = h.iter().sum();
                        let s: usize = h.iter().enumerate().map(|(l, c)| l * c).sum();
                        if n == 0 {
                            0.0
                        } else {
                            s as f64 / n as f64
                        }
                    }
                })
                .collect();
            assignments
                .chunks(m)
                .map(|bag| bag.iter().map(|&c| value[c]).collect())
                .collect()
        }
    };
    Ok(InstanceLabeling { labels, strategy })
}
