//! Transductive neighborhood-adaptive prediction sets: per-test-node
//! weighted conformal quantiles over k-hop calibration neighborhoods.

use rayon::prelude::*;

use crate::conformal::{build_sets, CalibrationKind, CalibrationResult, PredictionSets};
use crate::data::{LabelVector, ProbabilityMatrix, SplitAssignment};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::RandomPolicy;
use crate::scores::aps_scores;

/// Calibration-node weighting by hop distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// `w(d) = 1[d <= k]`
    Uniform,
    /// `w(d) = 1/d * 1[d <= k]`
    Hyperbolic,
    /// `w(d) = 2^-d * 1[d <= k]`
    Exponential,
}

impl WeightKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(Self::Uniform),
            "hyperbolic" => Ok(Self::Hyperbolic),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::UnknownWeightKind(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Hyperbolic => "hyperbolic",
            Self::Exponential => "exponential",
        }
    }

    fn weight(self, distance: u32) -> f64 {
        if distance == 0 {
            return 0.0; // sentinel: beyond k or unreachable
        }
        match self {
            Self::Uniform => 1.0,
            Self::Hyperbolic => 1.0 / distance as f64,
            Self::Exponential => (2.0f64).powi(-(distance as i32)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NapsConfig {
    /// Maximum hop distance receiving nonzero weight, >= 1.
    pub k: usize,
    pub weight_kind: WeightKind,
    /// Test nodes processed per batch, >= 1.
    pub batch_size: usize,
}

impl Default for NapsConfig {
    fn default() -> Self {
        Self {
            k: 2,
            weight_kind: WeightKind::Uniform,
            batch_size: 1024,
        }
    }
}

impl NapsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidHopCount(self.k));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "batch_size must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Minimum hop distances from a batch of test nodes to the calibration
/// nodes, truncated at `k`. Entry 0 means beyond `k` or unreachable; real
/// distances start at 1 because the two node sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopDistanceMatrix {
    batch: Vec<usize>,
    calib: Vec<usize>,
    entries: Vec<u32>,
}

impl HopDistanceMatrix {
    pub fn batch_nodes(&self) -> &[usize] {
        &self.batch
    }

    pub fn calib_nodes(&self) -> &[usize] {
        &self.calib
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.entries[row * self.calib.len()..(row + 1) * self.calib.len()]
    }
}

/// Iterated sparse reachability by the adjacency operator.
///
/// Hop 1 marks direct neighbors; at hop `n` the frontier is multiplied by
/// the adjacency once more and calibration columns that become reachable
/// (sign test on the walk-count block) while still unassigned receive
/// distance `n`.
pub fn sparse_k_hop(
    graph: &Graph,
    batch: &[usize],
    calib: &[usize],
    k: usize,
) -> Result<HopDistanceMatrix> {
    if k < 1 {
        return Err(Error::InvalidHopCount(k));
    }
    if !graph.is_symmetrized() {
        return Err(Error::NotSymmetrized);
    }
    let num_nodes = graph.num_nodes();
    for &v in batch.iter().chain(calib) {
        if v >= num_nodes {
            return Err(Error::NodeOutOfRange { id: v, num_nodes });
        }
    }
    // Column index of each calibration node, for the restriction step.
    let mut calib_col = vec![usize::MAX; num_nodes];
    for (j, &c) in calib.iter().enumerate() {
        calib_col[c] = j;
    }

    let cols = calib.len();
    let entries: Vec<u32> = batch
        .par_iter()
        .flat_map_iter(|&source| {
            let mut row = vec![0u32; cols];
            // reachable: nodes with a walk of length exactly `hop` from source.
            let mut reachable: Vec<usize> = graph.neighbors(source).to_vec();
            for &v in &reachable {
                let j = calib_col[v];
                if j != usize::MAX {
                    row[j] = 1;
                }
            }
            for hop in 2..=k as u32 {
                let mut next = Vec::new();
                let mut next_member = vec![false; num_nodes];
                for &u in &reachable {
                    for &w in graph.neighbors(u) {
                        if !next_member[w] {
                            next_member[w] = true;
                            next.push(w);
                        }
                    }
                }
                for &w in &next {
                    let j = calib_col[w];
                    if j != usize::MAX && row[j] == 0 {
                        row[j] = hop;
                    }
                }
                reachable = next;
                if reachable.is_empty() {
                    break;
                }
            }
            row
        })
        .collect();

    Ok(HopDistanceMatrix {
        batch: batch.to_vec(),
        calib: calib.to_vec(),
        entries,
    })
}

/// Maps hop distances to weights elementwise; the 0 sentinel maps to 0.
pub fn naps_weights(distances: &HopDistanceMatrix, weight_kind: WeightKind) -> Vec<f64> {
    distances
        .entries
        .iter()
        .map(|&d| weight_kind.weight(d))
        .collect()
}

/// Weighted conformal quantile for one test node.
///
/// Each calibration score carries its weight as a point mass; the test point
/// carries a pre-normalization mass of 1 at `+inf`. After normalizing all
/// masses to sum 1, the quantile is the smallest calibration score whose
/// accumulated mass reaches `1 - alpha`, or `+inf` when the mass at `+inf`
/// absorbs the deficit.
pub fn weighted_quantile(scores: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha { alpha });
    }
    if scores.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} weights",
            scores.len(),
            weights.len()
        )));
    }
    let order = ascending_order(scores);
    weighted_quantile_in_order(scores, &order, weights, alpha)
}

fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    order
}

/// Accumulation core shared with the batched path, which sorts the
/// calibration scores once and reuses the order for every test node.
fn weighted_quantile_in_order(
    scores: &[f64],
    order: &[usize],
    weights: &[f64],
    alpha: f64,
) -> Result<f64> {
    for &w in weights {
        if w.is_nan() || w < 0.0 {
            return Err(Error::Numeric(format!("negative weight {w}")));
        }
    }
    let total: f64 = weights.iter().sum::<f64>() + 1.0;
    let need = 1.0 - alpha;
    let eps = 8.0 * f64::EPSILON;
    let mut cum = 0.0;
    for &i in order {
        cum += weights[i] / total;
        if cum + eps >= need {
            return Ok(scores[i]);
        }
    }
    Ok(f64::INFINITY)
}

/// Per-test-node thresholds via batched k-hop distances, distance weights,
/// and weighted quantiles over APS calibration scores.
pub fn naps_calibrate(
    graph: &Graph,
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    split: &SplitAssignment,
    config: &NapsConfig,
    alpha: f64,
    policy: &RandomPolicy,
) -> Result<CalibrationResult> {
    config.validate()?;
    split.conformal_ready()?;
    if !graph.is_symmetrized() {
        return Err(Error::NotSymmetrized);
    }
    let calib_table = aps_scores(probs, &split.calib, false, policy)?;
    let calib_scores = calib_table.true_label_scores(labels, &split.calib)?;
    let score_order = ascending_order(&calib_scores);

    let batches: Vec<&[usize]> = split.test.chunks(config.batch_size).collect();
    let per_batch: Vec<Vec<f64>> = batches
        .par_iter()
        .map(|batch| -> Result<Vec<f64>> {
            let distances = sparse_k_hop(graph, batch, &split.calib, config.k)?;
            let weights = naps_weights(&distances, config.weight_kind);
            let cols = split.calib.len();
            batch
                .iter()
                .enumerate()
                .map(|(r, _)| {
                    weighted_quantile_in_order(
                        &calib_scores,
                        &score_order,
                        &weights[r * cols..(r + 1) * cols],
                        alpha,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let thresholds: Vec<f64> = per_batch.into_iter().flatten().collect();

    Ok(CalibrationResult {
        alpha,
        kind: CalibrationKind::PerNode {
            node_ids: split.test.clone(),
            thresholds,
            n_calib: split.calib.len(),
        },
    })
}

/// Full NAPS pipeline: per-node thresholds, then prediction sets over the
/// test nodes' APS scores.
pub fn naps_predict(
    graph: &Graph,
    probs: &ProbabilityMatrix,
    labels: &LabelVector,
    split: &SplitAssignment,
    config: &NapsConfig,
    alpha: f64,
    policy: &RandomPolicy,
) -> Result<PredictionSets> {
    let calibration = naps_calibrate(graph, probs, labels, split, config, alpha, policy)?;
    let test_table = aps_scores(probs, &split.test, false, policy)?;
    build_sets(&test_table, &calibration)
}
