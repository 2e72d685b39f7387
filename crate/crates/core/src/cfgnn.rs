//! Trainable score-correction model: a small graph-convolution network over
//! cached base-model probabilities, trained by mini-batch gradient descent
//! on a smooth inefficiency loss, with manual backpropagation throughout.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{build_sets, conformal_quantile, PredictionSets};
use crate::data::{LabelVector, ProbabilityMatrix};
use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::partition::SALT_CORRECTION;
use crate::rng::{RandomPolicy, StreamPurpose};
use crate::scores::{aps_scores, tps_scores, ScoreTable};

/// Score functions usable inside training and evaluation of the correction
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Tps,
    Aps,
    ApsRandomized,
}

impl ScoreKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tps" => Ok(Self::Tps),
            "aps" => Ok(Self::Aps),
            "aps_randomized" => Ok(Self::ApsRandomized),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tps => "tps",
            Self::Aps => "aps",
            Self::ApsRandomized => "aps_randomized",
        }
    }

    fn table(
        self,
        probs: &ProbabilityMatrix,
        nodes: &[usize],
        policy: &RandomPolicy,
    ) -> Result<ScoreTable> {
        match self {
            Self::Tps => tps_scores(probs, nodes),
            Self::Aps => aps_scores(probs, nodes, false, policy),
            Self::ApsRandomized => aps_scores(probs, nodes, true, policy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - z.tanh().powi(2),
        }
    }

    fn tag(self) -> u32 {
        match self {
            Self::Relu => 0,
            Self::Tanh => 1,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Self::Relu),
            1 => Ok(Self::Tanh),
            other => Err(Error::Numeric(format!("unknown activation tag {other}"))),
        }
    }
}

/// Symmetric-normalized adjacency with self-loops:
/// `D~^{-1/2} (A + I) D~^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Builds the operator; the graph must be structurally symmetric, since
    /// backpropagation reuses the operator as its own transpose.
    pub fn from_graph(graph: &Graph) -> Result<Self> {
        if !graph.is_symmetrized() {
            for u in 0..graph.num_nodes() {
                for &v in graph.neighbors(u) {
                    if graph.neighbors(v).binary_search(&u).is_err() {
                        return Err(Error::NotSymmetrized);
                    }
                }
            }
        }
        let n = graph.num_nodes();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt())
            .collect();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for u in 0..n {
            let mut cols: Vec<usize> = graph.neighbors(u).to_vec();
            cols.push(u);
            cols.sort_unstable();
            for &v in &cols {
                col_indices.push(v);
                values.push(inv_sqrt[u] * inv_sqrt[v]);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            num_nodes: n,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Sparse-dense product; the operator is symmetric, so this also serves
    /// as the transpose product during backpropagation.
    fn matmul(&self, x: &Mat) -> Mat {
        assert_eq!(self.num_nodes, x.rows);
        let mut out = Mat::zeros(x.rows, x.cols);
        for u in 0..self.num_nodes {
            let dst = out.row_mut(u);
            for idx in self.row_offsets[u]..self.row_offsets[u + 1] {
                let v = self.col_indices[idx];
                let a = self.values[idx];
                for (d, &s) in dst.iter_mut().zip(x.row(v)) {
                    *d += a * s;
                }
            }
        }
        out
    }
}

/// Graph-convolution correction model: input and output width `K`.
///
/// `H^(0) = P`; `H^(l+1) = act(A^ H^(l) W^(l))` for all but the last layer;
/// the last layer is linear and followed by a row softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct CfgnnModel {
    weights: Vec<Mat>,
    activation: Activation,
    temperature: f64,
}

impl CfgnnModel {
    /// Layer dimensions for `num_layers` layers mapping width `k` through
    /// `hidden` back to `k`.
    fn layer_dims(k: usize, hidden: usize, num_layers: usize) -> Vec<(usize, usize)> {
        if num_layers == 1 {
            return vec![(k, k)];
        }
        let mut dims = vec![(k, hidden)];
        for _ in 1..num_layers - 1 {
            dims.push((hidden, hidden));
        }
        dims.push((hidden, k));
        dims
    }

    /// Glorot-uniform initialization from the `cfgnn-init` stream.
    pub fn init(
        num_classes: usize,
        hidden: usize,
        num_layers: usize,
        activation: Activation,
        temperature: f64,
        policy: &RandomPolicy,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::InvalidConfig("need at least one layer".to_string()));
        }
        if temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature {temperature} must be positive"
            )));
        }
        let weights = Self::layer_dims(num_classes, hidden, num_layers)
            .into_iter()
            .enumerate()
            .map(|(layer, (rows, cols))| {
                let mut rng = policy.sequence_rng(StreamPurpose::CfgnnInit, layer as u64);
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Mat::from_vec(rows, cols, data)
            })
            .collect();
        Ok(Self {
            weights,
            activation,
            temperature,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].rows
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_dims(&self, layer: usize) -> (usize, usize) {
        (self.weights[layer].rows, self.weights[layer].cols)
    }

    pub fn weight_at(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.weights[layer].get(row, col)
    }

    pub fn set_weight(&mut self, layer: usize, row: usize, col: usize, value: f64) {
        self.weights[layer].set(row, col, value);
    }

    /// Flat binary layout: layer count, activation tag, temperature, then
    /// per layer (rows, cols, row-major f64 weights), all little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.weights.len() as u32).to_le_bytes())?;
        w.write_all(&self.activation.tag().to_le_bytes())?;
        w.write_all(&self.temperature.to_le_bytes())?;
        for mat in &self.weights {
            w.write_all(&(mat.rows as u32).to_le_bytes())?;
            w.write_all(&(mat.cols as u32).to_le_bytes())?;
            for &v in &mat.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut u32buf = [0u8; 4];
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        let num_layers = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let activation = Activation::from_tag(u32::from_le_bytes(u32buf))?;
        r.read_exact(&mut f64buf)?;
        let temperature = f64::from_le_bytes(f64buf);
        let mut weights = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            r.read_exact(&mut u32buf)?;
            let rows = u32::from_le_bytes(u32buf) as usize;
            r.read_exact(&mut u32buf)?;
            let cols = u32::from_le_bytes(u32buf) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut f64buf)?;
                data.push(f64::from_le_bytes(f64buf));
            }
            weights.push(Mat::from_vec(rows, cols, data));
        }
        Ok(Self {
            weights,
            activation,
            temperature,
        })
    }
}

/// Forward intermediates kept for backpropagation.
struct ForwardTrace {
    /// `A^ H^(l)` per layer.
    propagated: Vec<Mat>,
    /// Pre-activation `Z^(l) = A^ H^(l) W^(l)` per layer.
    pre_activation: Vec<Mat>,
    /// Softmax output.
    probs: Mat,
}

fn forward_trace(
    model: &CfgnnModel,
    adj: &NormalizedAdjacency,
    cached_probs: &ProbabilityMatrix,
) -> Result<ForwardTrace> {
    if cached_probs.num_classes() != model.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "model expects width {}, probabilities have {} classes",
            model.input_width(),
            cached_probs.num_classes()
        )));
    }
    if cached_probs.num_nodes() != adj.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows vs {} graph nodes",
            cached_probs.num_nodes(),
            adj.num_nodes()
        )));
    }
    let n = cached_probs.num_nodes();
    let k = cached_probs.num_classes();
    let mut h = Mat::from_vec(n, k, cached_probs.values().to_vec());
    let mut propagated = Vec::with_capacity(model.num_layers());
    let mut pre_activation = Vec::with_capacity(model.num_layers());
    for (layer, w) in model.weights.iter().enumerate() {
        let ah = adj.matmul(&h);
        let z = ah.matmul(w);
        propagated.push(ah);
        let last = layer + 1 == model.num_layers();
        h = if last {
            z.clone()
        } else {
            let mut a = z.clone();
            a.data
                .iter_mut()
                .for_each(|v| *v = model.activation.apply(*v));
            a
        };
        pre_activation.push(z);
    }
    // Row softmax.
    let mut probs = h;
    for r in 0..probs.rows {
        let row = probs.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(ForwardTrace {
        propagated,
        pre_activation,
        probs,
    })
}

/// Runs the correction model: corrected row-stochastic probabilities for
/// every node, computed from the cached base outputs and the normalized
/// adjacency alone.
pub fn forward(
    model: &CfgnnModel,
    adj: &NormalizedAdjacency,
    cached_probs: &ProbabilityMatrix,
) -> Result<ProbabilityMatrix> {
    let trace = forward_trace(model, adj, cached_probs)?;
    ProbabilityMatrix::new(
        cached_probs.num_nodes(),
        cached_probs.num_classes(),
        trace.probs.data,
    )
}

/// Exact order statistic at `ceil(level * n)` with a one-hot subgradient.
///
/// Returns the value and the index of the element carrying the gradient;
/// ties resolve to the lowest index among equal values. Levels above 1 are
/// clamped to 1; levels at or below 0 are rejected.
pub fn smooth_quantile(scores: &[f64], level: f64) -> Result<(f64, usize)> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let level = level.min(1.0);
    if level.is_nan() || level <= 0.0 {
        return Err(Error::InvalidQuantileLevel(level));
    }
    let n = scores.len();
    let target = level * n as f64;
    let eps = 8.0 * f64::EPSILON * target.max(1.0);
    let rank = ((target - eps).ceil() as usize).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let value = sorted[rank - 1];
    let index = scores
        .iter()
        .position(|&s| s == value)
        .expect("order statistic exists in input");
    Ok((value, index))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Inefficiency loss value and model-parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct LossComputation {
    pub loss: f64,
    /// Row-major gradient per layer, same shapes as the model weights.
    pub weight_grads: Vec<Vec<f64>>,
}

/// Smooth set-size surrogate over a batch of nodes.
///
/// With batch scores `s(i, k)` of the chosen score function on the corrected
/// probabilities and the threshold `eta = smooth_quantile(true-label scores,
/// (1 - alpha)(1 + 1/|B|))`, the loss is
/// `mean_i sum_k sigmoid((eta - s(i, k)) / tau)`: each sigmoid is the soft
/// membership of label `k` in node `i`'s set, so the loss sharpens to the
/// mean prediction-set size as `tau` vanishes.
///
/// Gradients flow through the sigmoid, the score function (sort permutation
/// and quantile index held fixed), the softmax, and the graph convolution.
/// Randomized-APS draws come from the `cfgnn-batch` stream keyed by `epoch`.
#[allow(clippy::too_many_arguments)]
pub fn inefficiency_loss(
    model: &CfgnnModel,
    adj: &NormalizedAdjacency,
    cached_probs: &ProbabilityMatrix,
    batch: &[usize],
    labels: &LabelVector,
    alpha: f64,
    score: ScoreKind,
    policy: &RandomPolicy,
    epoch: u64,
) -> Result<LossComputation> {
    if batch.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "loss batch needs at least 2 nodes, got {}",
            batch.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha { alpha });
    }
    let mut seen = std::collections::HashSet::with_capacity(batch.len());
    for &v in batch {
        if !seen.insert(v) {
            return Err(Error::InvalidConfig(format!(
                "loss batch lists node {v} twice"
            )));
        }
    }
    let trace = forward_trace(model, adj, cached_probs)?;
    let k = cached_probs.num_classes();
    let b = batch.len();
    let tau = model.temperature;

    let u_draws: Vec<f64> = match score {
        ScoreKind::ApsRandomized => batch
            .iter()
            .map(|&v| policy.uniform_unit_at(StreamPurpose::CfgnnBatch, v, epoch))
            .collect(),
        _ => vec![0.0; b],
    };

    // Scores and the (fixed) sort permutation per batch row.
    let mut scores_mat = Mat::zeros(b, k);
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(b);
    for (i, &v) in batch.iter().enumerate() {
        let p = trace.probs.row(v);
        match score {
            ScoreKind::Tps => {
                for (c, slot) in scores_mat.row_mut(i).iter_mut().enumerate() {
                    *slot = 1.0 - p[c];
                }
                orders.push(Vec::new());
            }
            ScoreKind::Aps | ScoreKind::ApsRandomized => {
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&a, &bb| p[bb].partial_cmp(&p[a]).unwrap().then(a.cmp(&bb)));
                let mut cum = 0.0;
                for &class in &order {
                    cum += p[class];
                    scores_mat.set(i, class, cum - u_draws[i] * p[class]);
                }
                orders.push(order);
            }
        }
    }

    let true_scores: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, &v)| scores_mat.get(i, labels.label(v)))
        .collect();
    let level = (1.0 - alpha) * (1.0 + 1.0 / b as f64);
    let (eta, eta_index) = smooth_quantile(&true_scores, level)?;

    // Loss and dL/ds.
    let mut loss = 0.0;
    let mut grad_scores = Mat::zeros(b, k);
    let mut grad_eta = 0.0;
    let scale = 1.0 / (tau * b as f64);
    for i in 0..b {
        for c in 0..k {
            let z = (eta - scores_mat.get(i, c)) / tau;
            let s = sigmoid(z);
            loss += s / b as f64;
            let g = s * (1.0 - s) * scale;
            grad_scores.set(i, c, -g);
            grad_eta += g;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("inefficiency loss is not finite".into()));
    }
    // The threshold is the true-label score of one batch element.
    let eta_label = labels.label(batch[eta_index]);
    let bumped = grad_scores.get(eta_index, eta_label) + grad_eta;
    grad_scores.set(eta_index, eta_label, bumped);

    // dL/dP on the batch rows, scattered into the full node set.
    let n = cached_probs.num_nodes();
    let mut grad_probs = Mat::zeros(n, k);
    for (i, &v) in batch.iter().enumerate() {
        let gs = grad_scores.row(i);
        let dst = grad_probs.row_mut(v);
        match score {
            ScoreKind::Tps => {
                for (d, &g) in dst.iter_mut().zip(gs) {
                    *d = -g;
                }
            }
            ScoreKind::Aps | ScoreKind::ApsRandomized => {
                // s(i, c) = sum_{rank(j) <= rank(c)} p_j - u p_c, so p_j
                // receives the suffix sum of score gradients at rank(j).
                let order = &orders[i];
                let mut suffix = 0.0;
                for &class in order.iter().rev() {
                    suffix += gs[class];
                    dst[class] = suffix;
                }
                for (d, &g) in dst.iter_mut().zip(gs) {
                    *d -= u_draws[i] * g;
                }
            }
        }
    }

    // Softmax backward on the batch rows.
    let mut grad_logits = Mat::zeros(n, k);
    for &v in batch {
        let p = trace.probs.row(v);
        let g = grad_probs.row(v);
        let dot: f64 = p.iter().zip(g).map(|(&pi, &gi)| pi * gi).sum();
        let dst = grad_logits.row_mut(v);
        for (c, d) in dst.iter_mut().enumerate() {
            *d = p[c] * (g[c] - dot);
        }
    }

    // Graph-convolution backward.
    let num_layers = model.num_layers();
    let mut weight_grads: Vec<Vec<f64>> = vec![Vec::new(); num_layers];
    let mut grad_z = grad_logits;
    for layer in (0..num_layers).rev() {
        let dw = trace.propagated[layer].transpose_matmul(&grad_z);
        weight_grads[layer] = dw.data;
        if layer > 0 {
            let grad_h = adj.matmul(&grad_z.matmul_transpose(&model.weights[layer]));
            let z_prev = &trace.pre_activation[layer - 1];
            let mut next = grad_h;
            for (slot, &z) in next.data.iter_mut().zip(&z_prev.data) {
                *slot *= model.activation.derivative(z);
            }
            grad_z = next;
        }
    }

    Ok(LossComputation { loss, weight_grads })
}

/// Training configuration for the correction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfgnnTrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the calibration set used for gradient updates; the rest
    /// validates per-epoch efficiency and later calibrates the final sets.
    pub cor_cal_fraction: f64,
    pub train_score: ScoreKind,
    pub eval_score: ScoreKind,
    pub hidden_width: usize,
    pub num_layers: usize,
    pub temperature: f64,
    pub activation: Activation,
}

impl Default for CfgnnTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-2,
            cor_cal_fraction: 0.5,
            train_score: ScoreKind::ApsRandomized,
            eval_score: ScoreKind::ApsRandomized,
            hidden_width: 64,
            num_layers: 2,
            temperature: 1.0,
            activation: Activation::Relu,
        }
    }
}

impl CfgnnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha { alpha: self.alpha });
        }
        if !(self.cor_cal_fraction > 0.0 && self.cor_cal_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cor_cal_fraction {} must lie in (0, 1)",
                self.cor_cal_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be at least 2".to_string(),
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.num_layers == 0 {
            return Err(Error::InvalidConfig("need at least one layer".to_string()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Splits the calibration nodes into correction-train and correction-test
/// halves, deterministically under the split stream. Each side keeps at
/// least two nodes.
pub fn split_correction_nodes(
    calib: &[usize],
    fraction: f64,
    policy: &RandomPolicy,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if calib.len() < 4 {
        return Err(Error::CalibrationTooSmall(calib.len()));
    }
    use rand::seq::SliceRandom;
    let mut pool = calib.to_vec();
    let mut rng = policy.sequence_rng(StreamPurpose::Split, SALT_CORRECTION);
    pool.shuffle(&mut rng);
    let n_train = ((pool.len() as f64 * fraction).floor() as usize).clamp(2, pool.len() - 2);
    let cor_cal = pool[..n_train].to_vec();
    let cor_test = pool[n_train..].to_vec();
    Ok((cor_cal, cor_test))
}

/// One epoch row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_inefficiency: f64,
}

/// Training result: the best snapshot by validation inefficiency plus the
/// per-epoch log and the correction split used.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CfgnnModel,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub cor_cal: Vec<usize>,
    pub cor_test: Vec<usize>,
}

/// Mean prediction-set size on `nodes` when calibrating on those same nodes
/// at the model's target level; the per-epoch validation criterion.
fn hard_inefficiency(
    corrected: &ProbabilityMatrix,
    labels: &LabelVector,
    nodes: &[usize],
    score: ScoreKind,
    alpha: f64,
    policy: &RandomPolicy,
) -> Result<f64> {
    let table = score.table(corrected, nodes, policy)?;
    let truth = table.true_label_scores(labels, nodes)?;
    let q = conformal_quantile(&truth, alpha)?
        .scalar_threshold()
        .unwrap();
    let total: usize = (0..nodes.len())
        .map(|row| table.row(row).iter().filter(|&&s| s <= q).count())
        .sum();
    Ok(total as f64 / nodes.len() as f64)
}

/// Trains the correction model by mini-batch gradient descent on the
/// inefficiency loss over shuffled correction-train batches, tracking hard
/// validation inefficiency after every epoch and returning the best
/// snapshot (the untouched initial model when nothing improves or
/// `epochs = 0`).
pub fn train(
    graph: &Graph,
    cached_probs: &ProbabilityMatrix,
    labels: &LabelVector,
    calib_nodes: &[usize],
    config: &CfgnnTrainConfig,
    policy: &RandomPolicy,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (cor_cal, cor_test) = split_correction_nodes(calib_nodes, config.cor_cal_fraction, policy)?;
    let adj = NormalizedAdjacency::from_graph(graph)?;
    let mut model = CfgnnModel::init(
        cached_probs.num_classes(),
        config.hidden_width,
        config.num_layers,
        config.activation,
        config.temperature,
        policy,
    )?;

    let evaluate = |model: &CfgnnModel| -> Result<f64> {
        let corrected = forward(model, &adj, cached_probs)?;
        hard_inefficiency(
            &corrected,
            labels,
            &cor_test,
            config.eval_score,
            config.alpha,
            policy,
        )
    };

    // Epoch 0: the initialized model, before any gradient step.
    let initial_loss = inefficiency_loss(
        &model,
        &adj,
        cached_probs,
        &cor_cal,
        labels,
        config.alpha,
        config.train_score,
        policy,
        0,
    )?
    .loss;
    let mut log = vec![EpochRecord {
        epoch: 0,
        mean_loss: initial_loss,
        val_inefficiency: evaluate(&model)?,
    }];
    let mut best = (0usize, log[0].val_inefficiency, model.clone());

    use rand::seq::SliceRandom;
    let mut order = cor_cal.clone();
    for epoch in 1..=config.epochs {
        let mut rng = policy.sequence_rng(StreamPurpose::CfgnnBatch, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue; // a trailing singleton cannot define a quantile
            }
            let computation = inefficiency_loss(
                &model,
                &adj,
                cached_probs,
                batch,
                labels,
                config.alpha,
                config.train_score,
                policy,
                epoch as u64,
            )?;
            epoch_loss += computation.loss;
            batches += 1;
            for (layer, grads) in computation.weight_grads.iter().enumerate() {
                for (slot, &g) in model.weights[layer].data.iter_mut().zip(grads) {
                    *slot -= config.learning_rate * g;
                }
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / batches.max(1) as f64,
            val_inefficiency: evaluate(&model)?,
        };
        log.push(record);
        if record.val_inefficiency < best.1 {
            best = (epoch, record.val_inefficiency, model.clone());
        }
    }

    Ok(TrainOutcome {
        model: best.2,
        best_epoch: best.0,
        log,
        cor_cal,
        cor_test,
    })
}

/// Builds test prediction sets from a trained model: corrected
/// probabilities, eval scores, a conformal quantile on the held-out
/// correction-test nodes, and thresholding on the test nodes.
#[allow(clippy::too_many_arguments)]
pub fn cfgnn_predict(
    model: &CfgnnModel,
    graph: &Graph,
    cached_probs: &ProbabilityMatrix,
    labels: &LabelVector,
    cor_test: &[usize],
    test_nodes: &[usize],
    eval_score: ScoreKind,
    alpha: f64,
    policy: &RandomPolicy,
) -> Result<PredictionSets> {
    if cor_test.is_empty() {
        return Err(Error::UnusableSplit("correction-test set is empty"));
    }
    if test_nodes.is_empty() {
        return Err(Error::UnusableSplit("test set is empty"));
    }
    let adj = NormalizedAdjacency::from_graph(graph)?;
    let corrected = forward(model, &adj, cached_probs)?;
    let calib_table = eval_score.table(&corrected, cor_test, policy)?;
    let truth = calib_table.true_label_scores(labels, cor_test)?;
    let calibration = conformal_quantile(&truth, alpha)?;
    let test_table = eval_score.table(&corrected, test_nodes, policy)?;
    build_sets(&test_table, &calibration)
}
