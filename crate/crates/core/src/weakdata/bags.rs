use crate::features::SegmentFeature;

use super::{features_to_matrix, Bag, DataError, Result};

/// Indices `floor(i * count / m)` for `i in 0..m`: evenly spaced when
/// there are more segments than `m`, each segment repeated in place when
/// there are fewer. Always non-decreasing.
pub fn resample_indices(count: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| i * count / m).collect()
}

/// Resamples one video's segments to exactly `m` instances, preserving
/// temporal order.
pub fn make_bags(
    video_id: &str,
    subject_id: &str,
    features: &[SegmentFeature],
    m: usize,
    label: u8,
) -> Result<Bag> {
    if features.is_empty() {
        return Err(DataError::EmptyVideo(video_id.to_string()));
    }
    if m == 0 {
        return Err(DataError::InvalidInput("instances per bag must be >= 1".into()));
    }
    let picked: Vec<&SegmentFeature> = resample_indices(features.len(), m)
        .into_iter()
        .map(|i| &features[i])
        .collect();
    Bag::new(video_id, subject_id, features_to_matrix(&picked)?, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureKind, SegmentWindow};

    fn segs(n: usize) -> Vec<SegmentFeature> {
        (0..n)
            .map(|i| {
                let window = SegmentWindow {
                    start_index: i * 10,
                    length: 20,
                    stride: 10,
                };
                SegmentFeature::new(vec![i as f64; 9], FeatureKind::PoseGaze, window).unwrap()
            })
            .collect()
    }

    #[test]
    fn downsamples_179_windows_evenly() {
        let idx = resample_indices(179, 100);
        let expected: Vec<usize> = (0..100).map(|i| (i * 179) / 100).collect();
        assert_eq!(idx, expected);
        assert!(idx.windows(2).all(|p| p[0] < p[1]));
        let bag = make_bags("v", "s", &segs(179), 100, 2).unwrap();
        assert_eq!(bag.instance_count(), 100);
        assert_eq!(bag.instances[[99, 0]], 177.0);
    }

    #[test]
    fn identity_at_equal_counts() {
        assert_eq!(resample_indices(100, 100), (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn upsampling_repeats_each_window_twice() {
        let idx = resample_indices(50, 100);
        for w in 0..50 {
            assert_eq!(idx.iter().filter(|&&i| i == w).count(), 2);
        }
    }

    #[test]
    fn empty_video_is_an_error() {
        assert!(matches!(
            make_bags("v", "s", &[], 100, 1),
            Err(DataError::EmptyVideo(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn always_m_instances_in_order(count in 1usize..400, m in 1usize..200) {
            let idx = resample_indices(count, m);
            proptest::prop_assert_eq!(idx.len(), m);
            proptest::prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
            proptest::prop_assert!(idx.iter().all(|&i| i < count));
            if count >= m {
                proptest::prop_assert!(idx.windows(2).all(|p| p[0] < p[1]));
            }
        }
    }
}
