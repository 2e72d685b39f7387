//! Evaluation metrics: coverage, efficiency, and label-stratified coverage.

use crate::conformal::PredictionSets;
use crate::data::LabelVector;
use crate::error::{Error, Result};

/// Fraction of nodes whose true label lies in their prediction set.
pub fn coverage(sets: &PredictionSets, labels: &LabelVector) -> Result<f64> {
    check_alignment(sets, labels)?;
    if sets.num_rows() == 0 {
        return Err(Error::EmptyScores);
    }
    let covered = sets
        .node_ids()
        .iter()
        .enumerate()
        .filter(|(row, &v)| sets.contains(*row, labels.label(v)))
        .count();
    Ok(covered as f64 / sets.num_rows() as f64)
}

/// Average prediction set size.
pub fn efficiency(sets: &PredictionSets) -> Result<f64> {
    if sets.num_rows() == 0 {
        return Err(Error::EmptyScores);
    }
    let total: usize = (0..sets.num_rows()).map(|row| sets.set_size(row)).sum();
    Ok(total as f64 / sets.num_rows() as f64)
}

/// Label-stratified coverage: per-class coverage plus its unweighted mean
/// over the classes present. Classes absent from the node list get `None`.
pub fn label_stratified_coverage(
    sets: &PredictionSets,
    labels: &LabelVector,
) -> Result<(f64, Vec<Option<f64>>)> {
    check_alignment(sets, labels)?;
    if sets.num_rows() == 0 {
        return Err(Error::EmptyScores);
    }
    let k = labels.num_classes();
    let mut covered = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (row, &v) in sets.node_ids().iter().enumerate() {
        let y = labels.label(v);
        counts[y] += 1;
        if sets.contains(row, y) {
            covered[y] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = covered
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok((mean, per_class))
}

/// The label-stratified coverage formula exactly as typeset in its source:
/// an indicator double sum over nodes and classes, normalized by `|test|`.
/// It reduces algebraically to `coverage / K`.
pub fn label_stratified_coverage_literal(
    sets: &PredictionSets,
    labels: &LabelVector,
) -> Result<f64> {
    check_alignment(sets, labels)?;
    if sets.num_rows() == 0 {
        return Err(Error::EmptyScores);
    }
    let k = labels.num_classes();
    let mut total = 0.0;
    for (row, &v) in sets.node_ids().iter().enumerate() {
        let mut inner = 0.0;
        for y in 0..k {
            if labels.label(v) == y && sets.contains(row, y) {
                inner += 1.0;
            }
        }
        total += inner / k as f64;
    }
    Ok(total / sets.num_rows() as f64)
}

fn check_alignment(sets: &PredictionSets, labels: &LabelVector) -> Result<()> {
    for &v in sets.node_ids() {
        if v >= labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "node {v} has no label ({} labels)",
                labels.len()
            )));
        }
    }
    if sets.num_classes() != labels.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} set classes vs {} label classes",
            sets.num_classes(),
            labels.num_classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{build_sets, CalibrationKind, CalibrationResult};
    use crate::data::ProbabilityMatrix;
    use crate::rng::{RandomPolicy, StreamPurpose};
    use crate::scores::tps_scores;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn sets_with_threshold(n: usize, k: usize, seed: u64, threshold: f64) -> PredictionSets {
        let policy = RandomPolicy::new(seed);
        let mut values = Vec::new();
        for v in 0..n {
            let mut row: Vec<f64> = (0..k)
                .map(|c| policy.uniform_unit_at(StreamPurpose::SynthProbs, v, c as u64) + 1e-3)
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            values.extend(row);
        }
        let probs = ProbabilityMatrix::new(n, k, values).unwrap();
        let nodes: Vec<usize> = (0..n).collect();
        let table = tps_scores(&probs, &nodes).unwrap();
        let cal = CalibrationResult {
            alpha: 0.1,
            kind: CalibrationKind::Scalar {
                threshold,
                n_calib: 1,
            },
        };
        build_sets(&table, &cal).unwrap()
    }

    #[test]
    fn coverage_counts_fraction() {
        // Half the nodes get a full set, half an empty one.
        let full = sets_with_threshold(4, 3, 1, f64::INFINITY);
        let labels = LabelVector::new(vec![0, 1, 2, 0], 3).unwrap();
        assert!(close(coverage(&full, &labels).unwrap(), 1.0));

        let none = sets_with_threshold(4, 3, 1, -1.0);
        assert!(close(coverage(&none, &labels).unwrap(), 0.0));
    }

    #[test]
    fn coverage_matches_indicator_oracle() {
        let sets = sets_with_threshold(40, 4, 7, 0.75);
        let labels = LabelVector::new((0..40).map(|v| (v * 7) % 4).collect(), 4).unwrap();
        let got = coverage(&sets, &labels).unwrap();
        let mut want = 0.0;
        for (row, &v) in sets.node_ids().iter().enumerate() {
            if sets.contains(row, labels.label(v)) {
                want += 1.0;
            }
        }
        want /= 40.0;
        assert!(close(got, want));
    }

    #[test]
    fn efficiency_means_set_sizes() {
        let full = sets_with_threshold(4, 5, 3, f64::INFINITY);
        assert!(close(efficiency(&full).unwrap(), 5.0));
        let sets = PredictionSets::from_label_lists(vec![0, 1], 3, &[vec![1], vec![1, 2]]).unwrap();
        assert!(close(efficiency(&sets).unwrap(), 1.5));
    }

    #[test]
    fn lsc_mean_of_class_coverages() {
        let sets = sets_with_threshold(50, 3, 5, 0.8);
        let labels = LabelVector::new((0..50).map(|v| v % 3).collect(), 3).unwrap();
        let (mean, per_class) = label_stratified_coverage(&sets, &labels).unwrap();
        // Oracle: group by class.
        let mut want = Vec::new();
        for y in 0..3usize {
            let members: Vec<usize> = (0..50).filter(|&v| labels.label(v) == y).collect();
            let covered = members
                .iter()
                .filter(|&&v| {
                    let row = sets.node_ids().iter().position(|&x| x == v).unwrap();
                    sets.contains(row, y)
                })
                .count();
            want.push(covered as f64 / members.len() as f64);
        }
        for (got, want) in per_class.iter().zip(&want) {
            assert!(close(got.unwrap(), *want));
        }
        assert!(close(mean, want.iter().sum::<f64>() / 3.0));
    }

    #[test]
    fn lsc_excludes_absent_classes() {
        let sets = sets_with_threshold(4, 3, 2, f64::INFINITY);
        // Only classes 0 and 1 appear.
        let labels = LabelVector::new(vec![0, 1, 0, 1], 3).unwrap();
        let (mean, per_class) = label_stratified_coverage(&sets, &labels).unwrap();
        assert!(per_class[2].is_none());
        assert!(close(mean, 1.0));
    }

    #[test]
    fn lsc_single_class_equals_coverage() {
        let sets = sets_with_threshold(10, 2, 9, 0.6);
        let labels = LabelVector::new(vec![1; 10], 2).unwrap();
        let (mean, _) = label_stratified_coverage(&sets, &labels).unwrap();
        assert!(close(mean, coverage(&sets, &labels).unwrap()));
    }

    #[test]
    fn literal_lsc_reduces_to_coverage_over_k() {
        let sets = sets_with_threshold(30, 4, 11, 0.7);
        let labels = LabelVector::new((0..30).map(|v| (v * 5) % 4).collect(), 4).unwrap();
        let literal = label_stratified_coverage_literal(&sets, &labels).unwrap();
        let cov = coverage(&sets, &labels).unwrap();
        assert!(close(literal, cov / 4.0));
    }

    #[test]
    fn coverage_is_class_weighted_mean_of_per_class() {
        let sets = sets_with_threshold(60, 3, 13, 0.72);
        let labels = LabelVector::new((0..60).map(|v| (v * 2) % 3).collect(), 3).unwrap();
        let cov = coverage(&sets, &labels).unwrap();
        let (_, per_class) = label_stratified_coverage(&sets, &labels).unwrap();
        let mut weighted = 0.0;
        for (y, class_cov) in per_class.iter().enumerate() {
            let count = (0..60).filter(|&v| labels.label(v) == y).count();
            weighted += class_cov.unwrap() * count as f64 / 60.0;
        }
        assert!(close(cov, weighted));
    }

    #[test]
    fn metrics_reject_misaligned_labels() {
        let sets = sets_with_threshold(4, 3, 1, 0.5);
        let labels = LabelVector::new(vec![0, 1], 3).unwrap();
        assert!(coverage(&sets, &labels).is_err());
    }
}
