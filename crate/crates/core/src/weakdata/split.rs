use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Result};

/// Subject partition of a subject-independent split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
}

impl SplitPlan {
    pub fn is_test(&self, subject: &str) -> bool {
        self.test_subjects.contains(subject)
    }
}

/// Partitions subjects so that the test side holds as close as possible to
/// `round(test_fraction * videos)` videos.
///
/// `video_subjects` lists the subject of every video. Subjects are shuffled
/// with `seed`, then a subset-sum over their video counts picks the test
/// subjects. Both sides always keep at least one subject.
pub fn plan_split(video_subjects: &[&str], test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidInput(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in video_subjects {
        *counts.entry(s).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(DataError::CannotSplit(format!(
            "need at least 2 subjects, found {}",
            counts.len()
        )));
    }
    let mut subjects: Vec<(&str, usize)> = counts.into_iter().collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = video_subjects.len();
    let target = (test_fraction * total as f64).round() as usize;
    // reach[s] = (previous sum, subject index) the first time sum s is hit.
    let mut reach: Vec<Option<(usize, usize)>> = vec![None; total + 1];
    let mut reachable = vec![false; total + 1];
    reachable[0] = true;
    for (i, &(_, c)) in subjects.iter().enumerate() {
        for s in (c..=total).rev() {
            if !reachable[s] && reachable[s - c] {
                reachable[s] = true;
                reach[s] = Some((s - c, i));
            }
        }
    }
    let best = (1..total)
        .filter(|&s| reachable[s])
        .min_by_key(|&s| (s.abs_diff(target), s))
        .ok_or_else(|| DataError::CannotSplit("no non-trivial subject partition".into()))?;

    let mut test_subjects = BTreeSet::new();
    let mut s = best;
    while let Some((prev, i)) = reach[s] {
        test_subjects.insert(subjects[i].0.to_string());
        s = prev;
    }
    let train_subjects = subjects
        .iter()
        .map(|(name, _)| name.to_string())
        .filter(|name| !test_subjects.contains(name))
        .collect();
    Ok(SplitPlan {
        train_subjects,
        test_subjects,
    })
}

/// Splits by subject; every video of a subject lands on the same side.
pub fn split_subject_independent(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let subjects: Vec<&str> = data.bags().iter().map(|b| b.subject_id.as_str()).collect();
    let plan = plan_split(&subjects, test_fraction, seed)?;
    let (test, train): (Vec<_>, Vec<_>) = data
        .bags()
        .iter()
        .cloned()
        .partition(|b| plan.is_test(&b.subject_id));
    Ok((
        Dataset::new(train, data.feature_kind())?,
        Dataset::new(test, data.feature_kind())?,
    ))
}
