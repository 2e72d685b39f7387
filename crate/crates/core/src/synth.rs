//! Synthetic data with known oracle probabilities.
//!
//! The generator exists so every coverage guarantee can be verified at desk
//! scale: labels are resampled from the generated probability rows, which
//! makes each row the exact conditional distribution of its label and the
//! (row, label) pairs exchangeable.

use crate::data::{LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{RandomPolicy, StreamPurpose};

/// Balanced K-block stochastic block model, symmetrized.
///
/// Node `v` belongs to block `v % K`; within-block pairs connect with
/// `intra_p`, cross-block pairs with `inter_p`.
pub fn generate_sbm(
    num_nodes: usize,
    num_classes: usize,
    intra_p: f64,
    inter_p: f64,
    policy: &RandomPolicy,
) -> Result<(Graph, LabelVector)> {
    if num_classes < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            have: num_classes,
        });
    }
    if !(0.0..=1.0).contains(&intra_p) || !(0.0..=1.0).contains(&inter_p) || inter_p > intra_p {
        return Err(Error::InvalidConfig(format!(
            "need 0 <= inter_p ({inter_p}) <= intra_p ({intra_p}) <= 1"
        )));
    }
    let labels: Vec<usize> = (0..num_nodes).map(|v| v % num_classes).collect();
    let mut edges = Vec::new();
    for u in 0..num_nodes {
        for v in (u + 1)..num_nodes {
            let p = if labels[u] == labels[v] {
                intra_p
            } else {
                inter_p
            };
            if policy.uniform_unit_at(StreamPurpose::SynthGraph, u, v as u64) < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(num_nodes, edges, true)?;
    Ok((graph, LabelVector::new(labels, num_classes)?))
}

/// Oracle probability rows plus labels resampled from those rows.
///
/// Each row mixes a one-hot at the seed label (weight `1 - noise`) with a
/// flat-Dirichlet draw (weight `noise`), so `noise = 0` gives exact one-hot
/// rows while intermediate noise keeps classes genuinely confusable. At
/// `noise = 1` the perturbation degenerates to the exact uniform vector.
/// The returned labels are drawn from the rows themselves, making the rows
/// exact conditional distributions.
pub fn oracle_probabilities(
    labels: &LabelVector,
    num_classes: usize,
    noise: f64,
    policy: &RandomPolicy,
) -> Result<(ProbabilityMatrix, LabelVector)> {
    let noises = vec![noise; num_classes];
    oracle_probabilities_per_class(labels, num_classes, &noises, policy)
}

/// Like [`oracle_probabilities`] but with a per-class noise level, used to
/// make some classes harder than others.
pub fn oracle_probabilities_per_class(
    labels: &LabelVector,
    num_classes: usize,
    noises: &[f64],
    policy: &RandomPolicy,
) -> Result<(ProbabilityMatrix, LabelVector)> {
    if num_classes < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            have: num_classes,
        });
    }
    if labels.num_classes() > num_classes {
        return Err(Error::ShapeMismatch(format!(
            "labels carry {} classes but {num_classes} were requested",
            labels.num_classes()
        )));
    }
    if noises.len() != num_classes {
        return Err(Error::ShapeMismatch(format!(
            "{} noise levels for {num_classes} classes",
            noises.len()
        )));
    }
    for &noise in noises {
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::InvalidConfig(format!(
                "noise {noise} must lie in [0, 1]"
            )));
        }
    }

    let n = labels.len();
    let k = num_classes;
    let mut values = Vec::with_capacity(n * k);
    let mut resampled = Vec::with_capacity(n);
    for v in 0..n {
        let seed_label = labels.label(v);
        let noise = noises[seed_label];
        // Flat Dirichlet draw via normalized exponentials.
        let mut dirichlet: Vec<f64> = (0..k)
            .map(|c| {
                let u = policy.uniform_unit_at(StreamPurpose::SynthProbs, v, c as u64);
                -(1.0 - u).ln()
            })
            .collect();
        let total: f64 = dirichlet.iter().sum();
        dirichlet.iter_mut().for_each(|g| *g /= total);

        let mut row = vec![0.0; k];
        for c in 0..k {
            let perturbation = if noise < 1.0 {
                dirichlet[c]
            } else {
                1.0 / k as f64
            };
            row[c] = noise * perturbation;
        }
        row[seed_label] += 1.0 - noise;
        // Guard against rounding drift before validation.
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);

        // Resample the label from the row's own distribution.
        let draw = policy.uniform_unit_at(StreamPurpose::SynthProbs, v, k as u64);
        let mut cum = 0.0;
        let mut chosen = k - 1;
        for (c, &p) in row.iter().enumerate() {
            cum += p;
            if draw < cum {
                chosen = c;
                break;
            }
        }
        resampled.push(chosen);
        values.extend(row);
    }
    Ok((
        ProbabilityMatrix::new(n, k, values)?,
        LabelVector::new(resampled, k)?,
    ))
}

/// Mean over nodes of the within-class neighbor fraction (isolated nodes are
/// skipped).
pub fn node_homophily_ratio(graph: &Graph, labels: &LabelVector) -> f64 {
    let mut total = 0.0;
    let mut counted = 0usize;
    for v in 0..graph.num_nodes() {
        let neighbors = graph.neighbors(v);
        if neighbors.is_empty() {
            continue;
        }
        let same = neighbors
            .iter()
            .filter(|&&u| labels.label(u) == labels.label(v))
            .count();
        total += same as f64 / neighbors.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}
