use super::{Dataset, Result};

/// Total number of copies of each bag, by level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub copies: [usize; crate::LEVELS],
}

impl Default for AugmentPolicy {
    /// Level-0 bags appear 20 times, level-3 bags twice.
    fn default() -> Self {
        AugmentPolicy {
            copies: [20, 1, 1, 2],
        }
    }
}

/// Class rebalancing with the default policy.
pub fn augment(train: &Dataset) -> Dataset {
    augment_with(train, &AugmentPolicy::default()).expect("default policy is valid")
}

/// Replaces every bag by `policy.copies[label]` identical, adjacent copies.
pub fn augment_with(train: &Dataset, policy: &AugmentPolicy) -> Result<Dataset> {
    if policy.copies.contains(&0) {
        return Err(super::DataError::InvalidInput(
            "every level needs at least one copy".into(),
        ));
    }
    let bags = train
        .bags()
        .iter()
        .flat_map(|b| std::iter::repeat_n(b, policy.copies[b.label as usize]).cloned())
        .collect();
    Dataset::new(bags, train.feature_kind())
}
