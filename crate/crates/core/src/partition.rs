//! Dataset partitioning: full-split (FS) and label-count (LC) styles.

use rand::seq::SliceRandom;

use crate::data::{LabelVector, SourceSplit, SplitAssignment};
use crate::error::{Error, Result};
use crate::rng::{RandomPolicy, StreamPurpose};

/// Salt space for the split stream: FS draws, then one per LC class, then the
/// correction split used by the score-correction model.
pub(crate) const SALT_FS: u64 = 0;
pub(crate) const SALT_LC_BASE: u64 = 1 << 20;
pub(crate) const SALT_CORRECTION: u64 = 1 << 21;

/// Partitions nodes by size constraints `fractions = (train, valid, calib,
/// test)`.
///
/// Sizes for train/valid/calib are `floor(n * f)`; remainder nodes go to
/// test. With a predefined source split, train/valid are drawn only from the
/// source train+valid pool, calib from the source test pool, and test takes
/// the rest of the source test pool.
pub fn full_split(
    num_nodes: usize,
    fractions: [f64; 4],
    predefined: Option<&SourceSplit>,
    policy: &RandomPolicy,
) -> Result<SplitAssignment> {
    for f in fractions {
        if f.is_nan() || f < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "split fraction {f} must be nonnegative"
            )));
        }
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions sum to {total} > 1"
        )));
    }
    let size = |f: f64| (num_nodes as f64 * f).floor() as usize;
    let (n_train, n_valid, n_calib) = (size(fractions[0]), size(fractions[1]), size(fractions[2]));

    match predefined {
        None => {
            let mut pool: Vec<usize> = (0..num_nodes).collect();
            let mut rng = policy.sequence_rng(StreamPurpose::Split, SALT_FS);
            pool.shuffle(&mut rng);
            if n_train + n_valid + n_calib > num_nodes {
                return Err(Error::InsufficientPool {
                    pool: "node",
                    available: num_nodes,
                    requested: n_train + n_valid + n_calib,
                });
            }
            let train = pool[..n_train].to_vec();
            let valid = pool[n_train..n_train + n_valid].to_vec();
            let calib = pool[n_train + n_valid..n_train + n_valid + n_calib].to_vec();
            let test = pool[n_train + n_valid + n_calib..].to_vec();
            Ok(SplitAssignment::new(train, valid, calib, test))
        }
        Some(source) => {
            let mut dev_pool: Vec<usize> = source
                .train
                .iter()
                .chain(source.valid.iter())
                .copied()
                .collect();
            if dev_pool.len() < n_train + n_valid {
                return Err(Error::InsufficientPool {
                    pool: "source train+valid",
                    available: dev_pool.len(),
                    requested: n_train + n_valid,
                });
            }
            let mut test_pool = source.test.clone();
            if test_pool.len() < n_calib {
                return Err(Error::InsufficientPool {
                    pool: "source test",
                    available: test_pool.len(),
                    requested: n_calib,
                });
            }
            let mut rng = policy.sequence_rng(StreamPurpose::Split, SALT_FS);
            dev_pool.shuffle(&mut rng);
            test_pool.shuffle(&mut rng);
            let train = dev_pool[..n_train].to_vec();
            let valid = dev_pool[n_train..n_train + n_valid].to_vec();
            let calib = test_pool[..n_calib].to_vec();
            let test = test_pool[n_calib..].to_vec();
            Ok(SplitAssignment::new(train, valid, calib, test))
        }
    }
}

/// Partitions nodes so train, valid, and calib each receive up to
/// `per_class` nodes of every class, filled in that order; remaining nodes
/// form the test set.
///
/// Classes may be exhausted before all three parts are filled; exhaustion is
/// legal, not an error.
pub fn label_count_split(
    labels: &LabelVector,
    per_class: usize,
    policy: &RandomPolicy,
) -> Result<SplitAssignment> {
    if per_class == 0 {
        return Err(Error::InvalidConfig(
            "per_class must be at least 1".to_string(),
        ));
    }
    let k = labels.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (node, &label) in labels.labels().iter().enumerate() {
        by_class[label].push(node);
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut calib = Vec::new();
    let mut test = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        let mut rng = policy.sequence_rng(StreamPurpose::Split, SALT_LC_BASE + class as u64);
        members.shuffle(&mut rng);
        let mut cursor = 0usize;
        for part in [&mut train, &mut valid, &mut calib] {
            let take = per_class.min(members.len() - cursor);
            part.extend_from_slice(&members[cursor..cursor + take]);
            cursor += take;
        }
        test.extend_from_slice(&members[cursor..]);
    }
    Ok(SplitAssignment::new(train, valid, calib, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fs_sizes_follow_floor_rule() {
        let policy = RandomPolicy::new(0);
        let split = full_split(100, [0.2, 0.1, 0.35, 0.35], None, &policy).unwrap();
        assert_eq!(
            (
                split.train.len(),
                split.valid.len(),
                split.calib.len(),
                split.test.len()
            ),
            (20, 10, 35, 35)
        );
        split.validate(100).unwrap();
    }

    #[test]
    fn fs_remainder_goes_to_test() {
        let policy = RandomPolicy::new(3);
        let split = full_split(97, [0.3, 0.2, 0.25, 0.25], None, &policy).unwrap();
        assert_eq!(
            (
                split.train.len(),
                split.valid.len(),
                split.calib.len(),
                split.test.len()
            ),
            (29, 19, 24, 25)
        );
    }

    #[test]
    fn fs_degenerate_all_train() {
        let policy = RandomPolicy::new(1);
        let split = full_split(10, [1.0, 0.0, 0.0, 0.0], None, &policy).unwrap();
        assert_eq!(split.train.len(), 10);
        assert!(split.calib.is_empty());
        assert!(split.conformal_ready().is_err());
    }

    #[test]
    fn fs_rejects_bad_fractions() {
        let policy = RandomPolicy::new(1);
        assert!(full_split(10, [0.5, 0.5, 0.5, 0.0], None, &policy).is_err());
        assert!(full_split(10, [-0.1, 0.0, 0.0, 0.0], None, &policy).is_err());
    }

    #[test]
    fn fs_respects_predefined_pools() {
        let source = SourceSplit {
            train: (0..40).collect(),
            valid: (40..60).collect(),
            test: (60..100).collect(),
        };
        let policy = RandomPolicy::new(9);
        let split = full_split(100, [0.2, 0.1, 0.2, 0.2], Some(&source), &policy).unwrap();
        assert!(split.train.iter().chain(&split.valid).all(|&v| v < 60));
        assert!(split.calib.iter().chain(&split.test).all(|&v| v >= 60));
        assert_eq!(split.calib.len(), 20);
        assert_eq!(split.test.len(), 20);
    }

    #[test]
    fn fs_errors_when_pool_too_small() {
        let source = SourceSplit {
            train: (0..5).collect(),
            valid: vec![],
            test: (5..10).collect(),
        };
        let policy = RandomPolicy::new(9);
        let err = full_split(10, [0.9, 0.0, 0.1, 0.0], Some(&source), &policy).unwrap_err();
        assert!(matches!(err, Error::InsufficientPool { .. }));
    }

    /// Positional shuffling makes FS equivariant under a consistent renaming
    /// of the node ids in the source pools.
    #[test]
    fn fs_is_permutation_equivariant_over_pools() {
        let n = 60usize;
        let source = SourceSplit {
            train: (0..30).collect(),
            valid: (30..40).collect(),
            test: (40..60).collect(),
        };
        let policy = RandomPolicy::new(17);
        let base = full_split(n, [0.3, 0.1, 0.2, 0.1], Some(&source), &policy).unwrap();

        // Relabel node v -> (v * 7 + 3) mod n, a permutation since gcd(7, 60) = 1.
        let sigma = |v: usize| (v * 7 + 3) % n;
        let relabeled = SourceSplit {
            train: source.train.iter().map(|&v| sigma(v)).collect(),
            valid: source.valid.iter().map(|&v| sigma(v)).collect(),
            test: source.test.iter().map(|&v| sigma(v)).collect(),
        };
        let moved = full_split(n, [0.3, 0.1, 0.2, 0.1], Some(&relabeled), &policy).unwrap();

        let map = |part: &[usize]| {
            let mut v: Vec<usize> = part.iter().map(|&x| sigma(x)).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(moved.train, map(&base.train));
        assert_eq!(moved.valid, map(&base.valid));
        assert_eq!(moved.calib, map(&base.calib));
        assert_eq!(moved.test, map(&base.test));
    }

    #[test]
    fn lc_fills_parts_per_class() {
        // 4 classes, 70 nodes per class.
        let labels = LabelVector::new((0..280).map(|v| v % 4).collect(), 4).unwrap();
        let policy = RandomPolicy::new(5);
        let split = label_count_split(&labels, 20, &policy).unwrap();
        for part in [&split.train, &split.valid, &split.calib] {
            let mut counts = [0usize; 4];
            for &v in part {
                counts[labels.label(v)] += 1;
            }
            assert_eq!(counts, [20, 20, 20, 20]);
        }
        assert_eq!(split.test.len(), 280 - 3 * 80);
        split.validate(280).unwrap();
    }

    #[test]
    fn lc_exhaustion_fills_train_first() {
        // Class 1 has only 5 members.
        let mut label_values = vec![0usize; 50];
        for slot in label_values.iter_mut().take(5) {
            *slot = 1;
        }
        let labels = LabelVector::new(label_values, 2).unwrap();
        let policy = RandomPolicy::new(2);
        let split = label_count_split(&labels, 10, &policy).unwrap();
        let count_class1 = |part: &[usize]| part.iter().filter(|&&v| labels.label(v) == 1).count();
        assert_eq!(count_class1(&split.train), 5);
        assert_eq!(count_class1(&split.valid), 0);
        assert_eq!(count_class1(&split.calib), 0);
        assert_eq!(count_class1(&split.test), 0);
    }

    #[test]
    fn lc_counts_match_sequential_min_rule() {
        // Oracle: per class, the parts take min(per_class, remaining) in order.
        let policy = RandomPolicy::new(33);
        for (num_per_class, per_class) in [(3usize, 5usize), (12, 4), (7, 7), (1, 2)] {
            let labels =
                LabelVector::new((0..num_per_class * 3).map(|v| v % 3).collect(), 3).unwrap();
            let split = label_count_split(&labels, per_class, &policy).unwrap();
            let mut remaining = num_per_class;
            let mut expect = [0usize; 3];
            for slot in &mut expect {
                let take = per_class.min(remaining);
                *slot = take;
                remaining -= take;
            }
            assert_eq!(split.train.len(), expect[0] * 3);
            assert_eq!(split.valid.len(), expect[1] * 3);
            assert_eq!(split.calib.len(), expect[2] * 3);
            split.validate(labels.len()).unwrap();
        }
    }
}
