//! Experiment configuration, the (method, alpha, seed) grid runner, and
//! report emission.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, ProbabilityMatrix, SourceSplit, SplitAssignment};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{
    coverage, efficiency, label_stratified_coverage, label_stratified_coverage_literal,
};
use crate::naps::{NapsConfig, WeightKind};
use crate::partition::{full_split, label_count_split};
use crate::pipeline::{predict_sets, Dataset, Method};
use crate::rng::RandomPolicy;
use crate::scores::{DiffusionParams, RapsParams, RapsPenalty};

/// Per-cell metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub coverage: f64,
    pub efficiency: f64,
    pub lsc: f64,
    pub per_class_coverage: Vec<Option<f64>>,
    pub alpha: f64,
    pub method: String,
    pub seed: u64,
}

/// File paths and loading options for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataPaths {
    pub edges: PathBuf,
    pub probabilities: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub num_nodes: Option<usize>,
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default = "default_true")]
    pub symmetrize: bool,
    #[serde(default)]
    pub predefined_split: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

/// Split style for an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum SplitSpec {
    Fs { fractions: [f64; 4] },
    Lc { per_class: usize },
    File { path: PathBuf },
}

/// One method entry in a config; unknown fields are rejected so typos in
/// hyperparameter names fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub k_reg: Option<usize>,
    #[serde(default)]
    pub rank_penalty: Option<bool>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub weight: Option<String>,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl MethodSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            nu: None,
            k_reg: None,
            rank_penalty: None,
            delta: None,
            k: None,
            weight: None,
            batch_size: None,
        }
    }

    pub fn to_method(&self) -> Result<Method> {
        let diffusion = || DiffusionParams::new(self.delta.unwrap_or(0.5));
        match self.name.as_str() {
            "tps" => Ok(Method::Tps),
            "tps_classwise" => Ok(Method::TpsClasswise),
            "aps" => Ok(Method::Aps),
            "aps_randomized" => Ok(Method::ApsRandomized),
            "raps" => {
                let defaults = RapsParams::default();
                Ok(Method::Raps(RapsParams {
                    nu: self.nu.unwrap_or(defaults.nu),
                    k_reg: self.k_reg.unwrap_or(defaults.k_reg),
                    penalty: if self.rank_penalty.unwrap_or(false) {
                        RapsPenalty::Rank
                    } else {
                        RapsPenalty::LiteralSet
                    },
                }))
            }
            "daps" => Ok(Method::Daps(diffusion()?)),
            "dtps" => Ok(Method::Dtps(diffusion()?)),
            "naps" => {
                let defaults = NapsConfig::default();
                Ok(Method::Naps(NapsConfig {
                    k: self.k.unwrap_or(defaults.k),
                    weight_kind: match &self.weight {
                        Some(name) => WeightKind::parse(name)?,
                        None => defaults.weight_kind,
                    },
                    batch_size: self.batch_size.unwrap_or(defaults.batch_size),
                }))
            }
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// A full experiment: dataset, split style, method grid, alpha grid, seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    pub split: SplitSpec,
    pub methods: Vec<MethodSpec>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub lsc_literal: bool,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Loads a dataset from the standard file formats. The probabilities file is
/// read as raw binary when its extension is `.bin`, CSV otherwise.
pub fn load_dataset(paths: &DataPaths) -> Result<Dataset> {
    let edges = fs::File::open(&paths.edges)?;
    let graph = Graph::parse_edge_list(BufReader::new(edges), paths.num_nodes, paths.symmetrize)?;
    let probs_file = fs::File::open(&paths.probabilities)?;
    let probs = if paths.probabilities.extension().is_some_and(|e| e == "bin") {
        ProbabilityMatrix::from_binary(BufReader::new(probs_file))?
    } else {
        ProbabilityMatrix::from_csv(BufReader::new(probs_file))?
    };
    let labels_file = fs::File::open(&paths.labels)?;
    let labels = LabelVector::from_lines(
        BufReader::new(labels_file),
        paths.num_classes.or(Some(probs.num_classes())),
    )?;
    let source_split = match &paths.predefined_split {
        Some(path) => Some(SourceSplit::from_json(fs::File::open(path)?)?),
        None => None,
    };
    let dataset = Dataset {
        graph,
        probs,
        labels,
        source_split,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Materializes the split for one seed.
pub fn make_split(
    dataset: &Dataset,
    spec: &SplitSpec,
    policy: &RandomPolicy,
) -> Result<SplitAssignment> {
    let split = match spec {
        SplitSpec::Fs { fractions } => full_split(
            dataset.graph.num_nodes(),
            *fractions,
            dataset.source_split.as_ref(),
            policy,
        )?,
        SplitSpec::Lc { per_class } => label_count_split(&dataset.labels, *per_class, policy)?,
        SplitSpec::File { path } => {
            let split = SplitAssignment::from_json(fs::File::open(path)?)?;
            split.validate(dataset.graph.num_nodes())?;
            split
        }
    };
    Ok(split)
}

/// Runs one grid cell: split, score, calibrate, predict, measure.
pub fn run_cell(
    dataset: &Dataset,
    method: &Method,
    split_spec: &SplitSpec,
    alpha: f64,
    seed: u64,
    lsc_literal: bool,
) -> Result<Report> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha { alpha });
    }
    let policy = RandomPolicy::new(seed);
    let split = make_split(dataset, split_spec, &policy)?;
    let sets = predict_sets(dataset, method, &split, alpha, &policy)?;
    let (lsc_mean, per_class) = label_stratified_coverage(&sets, &dataset.labels)?;
    let lsc = if lsc_literal {
        label_stratified_coverage_literal(&sets, &dataset.labels)?
    } else {
        lsc_mean
    };
    Ok(Report {
        coverage: coverage(&sets, &dataset.labels)?,
        efficiency: efficiency(&sets)?,
        lsc,
        per_class_coverage: per_class,
        alpha,
        method: method.name().to_string(),
        seed,
    })
}

/// Runs the whole grid in a parallel worker pool; cells stay deterministic
/// because all randomness is keyed by the cell's own seed.
pub fn run_grid(dataset: &Dataset, config: &ExperimentConfig) -> Result<Vec<Report>> {
    let mut cells = Vec::new();
    for spec in &config.methods {
        let method = spec.to_method()?;
        for &alpha in &config.alphas {
            for &seed in &config.seeds {
                cells.push((method.clone(), alpha, seed));
            }
        }
    }
    cells
        .par_iter()
        .map(|(method, alpha, seed)| {
            run_cell(
                dataset,
                method,
                &config.split,
                *alpha,
                *seed,
                config.lsc_literal,
            )
        })
        .collect()
}

/// One row of the aggregate CSV: mean and normal-approximation 95% CI over
/// seeds for each (method, alpha) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub alpha: f64,
    pub num_seeds: usize,
    pub coverage_mean: f64,
    pub coverage_ci95: f64,
    pub efficiency_mean: f64,
    pub efficiency_ci95: f64,
    pub lsc_mean: f64,
    pub lsc_ci95: f64,
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Aggregates per-cell reports grouped by (method, alpha), preserving the
/// order in which groups first appear.
pub fn aggregate(reports: &[Report]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, f64)> = Vec::new();
    for r in reports {
        if !order
            .iter()
            .any(|(m, a)| *m == r.method && a.to_bits() == r.alpha.to_bits())
        {
            order.push((r.method.clone(), r.alpha));
        }
    }
    order
        .into_iter()
        .map(|(method, alpha)| {
            let group: Vec<&Report> = reports
                .iter()
                .filter(|r| r.method == method && r.alpha.to_bits() == alpha.to_bits())
                .collect();
            let collect =
                |f: fn(&Report) -> f64| -> Vec<f64> { group.iter().map(|r| f(r)).collect() };
            let (coverage_mean, coverage_ci95) = mean_ci(&collect(|r| r.coverage));
            let (efficiency_mean, efficiency_ci95) = mean_ci(&collect(|r| r.efficiency));
            let (lsc_mean, lsc_ci95) = mean_ci(&collect(|r| r.lsc));
            AggregateRow {
                method,
                alpha,
                num_seeds: group.len(),
                coverage_mean,
                coverage_ci95,
                efficiency_mean,
                efficiency_ci95,
                lsc_mean,
                lsc_ci95,
            }
        })
        .collect()
}

/// Renders the aggregate CSV; fixed-precision formatting keeps re-runs
/// byte-identical.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "method,alpha,seeds,coverage_mean,coverage_ci95,efficiency_mean,efficiency_ci95,lsc_mean,lsc_ci95\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.method,
            r.alpha,
            r.num_seeds,
            r.coverage_mean,
            r.coverage_ci95,
            r.efficiency_mean,
            r.efficiency_ci95,
            r.lsc_mean,
            r.lsc_ci95
        ));
    }
    out
}

/// File name for one cell's JSON report.
pub fn report_file_name(report: &Report) -> String {
    format!(
        "report_{}_a{}_s{}.json",
        report.method, report.alpha, report.seed
    )
}
