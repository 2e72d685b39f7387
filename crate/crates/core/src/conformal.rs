//! Conformal quantiles, prediction-set construction, and the pre-deployment
//! efficiency comparison built on incorrect-label miscoverage.

use serde::{Deserialize, Serialize};

use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::rng::{RandomPolicy, StreamPurpose};
use crate::scores::ScoreTable;

/// Conformal rank `ceil((n + 1) * (1 - alpha))`, computed robustly against
/// floating-point noise in the product.
pub(crate) fn conformal_rank(n: usize, alpha: f64) -> usize {
    let target = (n as f64 + 1.0) * (1.0 - alpha);
    let eps = 8.0 * f64::EPSILON * target.max(1.0);
    (target - eps).ceil() as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha { alpha });
    }
    Ok(())
}

/// Calibrated threshold(s) at a target miscoverage level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha: f64,
    #[serde(flatten)]
    pub kind: CalibrationKind,
}

/// Scalar, per-class, or per-test-node thresholds. `+inf` (serialized as
/// `null`) means every label is admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationKind {
    Scalar {
        #[serde(with = "extended_real")]
        threshold: f64,
        n_calib: usize,
    },
    PerClass {
        #[serde(with = "extended_real_vec")]
        thresholds: Vec<f64>,
        n_calib: Vec<usize>,
    },
    PerNode {
        node_ids: Vec<usize>,
        #[serde(with = "extended_real_vec")]
        thresholds: Vec<f64>,
        n_calib: usize,
    },
}

/// JSON has no infinity literal, so thresholds serialize as `null` when the
/// degenerate all-label case forces `+inf`.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod extended_real_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(
            v.iter()
                .map(|x| if x.is_infinite() { None } else { Some(*x) }),
        )
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}

impl CalibrationResult {
    pub fn scalar_threshold(&self) -> Option<f64> {
        match &self.kind {
            CalibrationKind::Scalar { threshold, .. } => Some(*threshold),
            _ => None,
        }
    }
}

/// The conformal quantile: the `ceil((n + 1)(1 - alpha))`-th smallest score,
/// or `+inf` when that rank exceeds `n`.
pub fn conformal_quantile(true_scores: &[f64], alpha: f64) -> Result<CalibrationResult> {
    check_alpha(alpha)?;
    let n = true_scores.len();
    if n == 0 {
        return Err(Error::EmptyScores);
    }
    let threshold = quantile_value(true_scores, conformal_rank(n, alpha));
    Ok(CalibrationResult {
        alpha,
        kind: CalibrationKind::Scalar {
            threshold,
            n_calib: n,
        },
    })
}

/// Rank-th smallest score (1-based) via selection; `+inf` past the end.
fn quantile_value(scores: &[f64], rank: usize) -> f64 {
    if rank > scores.len() {
        return f64::INFINITY;
    }
    let mut work = scores.to_vec();
    let (_, value, _) = work.select_nth_unstable_by(rank - 1, |a, b| a.partial_cmp(b).unwrap());
    *value
}

/// Per-class conformal quantiles with `alpha_y = alpha` for every class.
/// Classes absent from calibration get an `+inf` threshold.
pub fn classwise_quantiles(
    true_scores: &[f64],
    calib_labels: &[usize],
    alpha: f64,
    num_classes: usize,
) -> Result<CalibrationResult> {
    check_alpha(alpha)?;
    if true_scores.len() != calib_labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            true_scores.len(),
            calib_labels.len()
        )));
    }
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    for (&s, &y) in true_scores.iter().zip(calib_labels) {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                index: 0,
                num_classes,
            });
        }
        per_class[y].push(s);
    }
    let mut thresholds = Vec::with_capacity(num_classes);
    let mut n_calib = Vec::with_capacity(num_classes);
    for scores in &per_class {
        let n = scores.len();
        if n == 0 {
            thresholds.push(f64::INFINITY);
        } else {
            thresholds.push(quantile_value(scores, conformal_rank(n, alpha)));
        }
        n_calib.push(n);
    }
    Ok(CalibrationResult {
        alpha,
        kind: CalibrationKind::PerClass {
            thresholds,
            n_calib,
        },
    })
}

/// Per-node label sets stored as bit rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSets {
    node_ids: Vec<usize>,
    num_classes: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl PredictionSets {
    fn empty(node_ids: Vec<usize>, num_classes: usize) -> Self {
        let words_per_row = num_classes.div_ceil(64);
        let bits = vec![0u64; words_per_row * node_ids.len()];
        Self {
            node_ids,
            num_classes,
            words_per_row,
            bits,
        }
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn num_rows(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn insert(&mut self, row: usize, label: usize) {
        self.bits[row * self.words_per_row + label / 64] |= 1u64 << (label % 64);
    }

    pub fn contains(&self, row: usize, label: usize) -> bool {
        self.bits[row * self.words_per_row + label / 64] & (1u64 << (label % 64)) != 0
    }

    /// Set cardinality for one row.
    pub fn set_size(&self, row: usize) -> usize {
        self.bits[row * self.words_per_row..(row + 1) * self.words_per_row]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn labels_of(&self, row: usize) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|&y| self.contains(row, y))
            .collect()
    }

    /// Rebuilds sets from explicit per-node label lists (the JSON layout).
    pub fn from_label_lists(
        node_ids: Vec<usize>,
        num_classes: usize,
        lists: &[Vec<usize>],
    ) -> Result<Self> {
        if lists.len() != node_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} label lists for {} nodes",
                lists.len(),
                node_ids.len()
            )));
        }
        let mut sets = Self::empty(node_ids, num_classes);
        for (row, labels) in lists.iter().enumerate() {
            for &y in labels {
                if y >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: y,
                        index: row,
                        num_classes,
                    });
                }
                sets.insert(row, y);
            }
        }
        Ok(sets)
    }

    /// True when every row of `self` contains the same row of `other`.
    pub fn contains_all(&self, other: &PredictionSets) -> bool {
        self.node_ids == other.node_ids
            && self.bits.iter().zip(&other.bits).all(|(a, b)| a & b == *b)
    }
}

/// Builds prediction sets: label `y` enters node `v`'s set iff
/// `score(v, y) <= threshold` for the applicable threshold.
pub fn build_sets(scores: &ScoreTable, calibration: &CalibrationResult) -> Result<PredictionSets> {
    let k = scores.num_classes();
    let mut sets = PredictionSets::empty(scores.node_ids().to_vec(), k);
    match &calibration.kind {
        CalibrationKind::Scalar { threshold, .. } => {
            for row in 0..scores.num_rows() {
                for (y, &s) in scores.row(row).iter().enumerate() {
                    if s <= *threshold {
                        sets.insert(row, y);
                    }
                }
            }
        }
        CalibrationKind::PerClass { thresholds, .. } => {
            if thresholds.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "{} class thresholds vs {} classes",
                    thresholds.len(),
                    k
                )));
            }
            for row in 0..scores.num_rows() {
                for (y, &s) in scores.row(row).iter().enumerate() {
                    if s <= thresholds[y] {
                        sets.insert(row, y);
                    }
                }
            }
        }
        CalibrationKind::PerNode {
            node_ids,
            thresholds,
            ..
        } => {
            if node_ids != scores.node_ids() {
                return Err(Error::MismatchedNodes(
                    "per-node thresholds do not align with the score table".to_string(),
                ));
            }
            for (row, &t) in thresholds.iter().enumerate() {
                for (y, &s) in scores.row(row).iter().enumerate() {
                    if s <= t {
                        sets.insert(row, y);
                    }
                }
            }
        }
    }
    Ok(sets)
}

/// Uniformly samples one incorrect label per node from the `y-random` stream.
pub fn sample_incorrect_labels(
    labels: &LabelVector,
    nodes: &[usize],
    policy: &RandomPolicy,
) -> Result<Vec<usize>> {
    let k = labels.num_classes();
    if k < 2 {
        return Err(Error::TooFewClasses { needed: 2, have: k });
    }
    Ok(nodes
        .iter()
        .map(|&v| {
            let truth = labels.label(v);
            let draw = policy.integer_below(StreamPurpose::YRandom, v, 0, k - 1);
            if draw >= truth {
                draw + 1
            } else {
                draw
            }
        })
        .collect())
}

/// Incorrect-label miscoverage estimate at a fixed threshold:
/// `(#{s_i > q} + 1) / (n + 1)`.
pub fn alpha_c(scores_incorrect: &[f64], q_hat: f64) -> Result<f64> {
    let n = scores_incorrect.len();
    if n == 0 {
        return Err(Error::EmptyScores);
    }
    let above = scores_incorrect.iter().filter(|&&s| s > q_hat).count();
    Ok((above as f64 + 1.0) / (n as f64 + 1.0))
}

/// Outcome of the pre-deployment efficiency comparison of two score
/// functions on a shared calibration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyComparison {
    pub alpha_c_a: f64,
    pub alpha_c_atilde: f64,
    pub n_calib: usize,
    pub num_classes: usize,
    /// `alpha_c_a - alpha_c_atilde >= 2 / (n + 1)`: method A is provably at
    /// least as efficient in expectation.
    pub condition_met: bool,
    /// `(K - 1) * (alpha_c_a - alpha_c_atilde)`: the expected set-size gap of
    /// A over A-tilde as the calibration set grows.
    pub asymptotic_gain: f64,
}

/// Compares two score tables over the same calibration nodes.
///
/// Both methods are paired on a single incorrect-label draw per node, so the
/// comparison is variance-reduced and deterministic under the policy.
pub fn compare_efficiency(
    table_a: &ScoreTable,
    table_atilde: &ScoreTable,
    labels: &LabelVector,
    alpha: f64,
    policy: &RandomPolicy,
) -> Result<EfficiencyComparison> {
    if table_a.node_ids() != table_atilde.node_ids() {
        return Err(Error::MismatchedNodes(
            "efficiency comparison requires identical calibration nodes".to_string(),
        ));
    }
    if table_a.num_classes() != table_atilde.num_classes() {
        return Err(Error::ShapeMismatch(
            "score tables disagree on the class count".to_string(),
        ));
    }
    let nodes = table_a.node_ids();
    let n = nodes.len();
    let k = table_a.num_classes();

    let q_a = conformal_quantile(&table_a.true_label_scores(labels, nodes)?, alpha)?
        .scalar_threshold()
        .unwrap();
    let q_atilde = conformal_quantile(&table_atilde.true_label_scores(labels, nodes)?, alpha)?
        .scalar_threshold()
        .unwrap();

    let incorrect = sample_incorrect_labels(labels, nodes, policy)?;
    let gather = |table: &ScoreTable| -> Vec<f64> {
        nodes
            .iter()
            .zip(&incorrect)
            .map(|(&v, &y)| table.row_for_node(v).unwrap()[y])
            .collect()
    };
    let alpha_c_a = alpha_c(&gather(table_a), q_a)?;
    let alpha_c_atilde = alpha_c(&gather(table_atilde), q_atilde)?;

    let gap = alpha_c_a - alpha_c_atilde;
    Ok(EfficiencyComparison {
        alpha_c_a,
        alpha_c_atilde,
        n_calib: n,
        num_classes: k,
        condition_met: gap >= 2.0 / (n as f64 + 1.0),
        asymptotic_gain: (k as f64 - 1.0) * gap,
    })
}
