//! `graphcp` — conformal prediction for node classification from the shell.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphcp::Error;

#[derive(Parser)]
#[command(
    name = "graphcp",
    version,
    about = "Split conformal prediction on graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Dataset files shared by most subcommands.
#[derive(Args, Clone)]
struct DataArgs {
    /// Edge list, one `u<TAB>v` pair per line, 0-based ids
    #[arg(long)]
    edges: std::path::PathBuf,
    /// Probabilities: CSV with header c0..c{K-1}, or raw binary if the
    /// extension is .bin
    #[arg(long)]
    probs: std::path::PathBuf,
    /// Labels, one integer per line
    #[arg(long)]
    labels: std::path::PathBuf,
    /// Declared node count (inferred from the edge list when omitted)
    #[arg(long)]
    num_nodes: Option<usize>,
    /// Declared class count (inferred from the probabilities when omitted)
    #[arg(long)]
    num_classes: Option<usize>,
    /// Load the graph as-is instead of symmetrizing it
    #[arg(long)]
    no_symmetrize: bool,
    /// Predefined source split JSON ({"train": [...], "valid": [...],
    /// "test": [...]})
    #[arg(long)]
    predefined_split: Option<std::path::PathBuf>,
}

#[derive(Args, Clone)]
struct SplitStyleArgs {
    /// Split style: fs or lc
    #[arg(long, default_value = "fs")]
    style: String,
    /// FS fractions train,valid,calib,test
    #[arg(long, default_value = "0.2,0.1,0.35,0.35")]
    fractions: String,
    /// LC samples per class
    #[arg(long, default_value_t = 20)]
    per_class: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic SBM dataset with oracle probabilities
    Synth {
        #[arg(long, default_value_t = 1000)]
        num_nodes: usize,
        #[arg(long, default_value_t = 4)]
        num_classes: usize,
        /// Within-block edge probability
        #[arg(long, default_value_t = 0.05)]
        intra: f64,
        /// Cross-block edge probability
        #[arg(long, default_value_t = 0.01)]
        inter: f64,
        /// Probability noise level in [0, 1]
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        /// Emit probabilities as raw binary instead of CSV
        #[arg(long)]
        binary_probs: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Partition nodes into train/valid/calib/test
    Split {
        /// Labels, one integer per line (defines the node count)
        #[arg(long)]
        labels: std::path::PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        #[command(flatten)]
        style: SplitStyleArgs,
        /// Predefined source split JSON constraining FS pools
        #[arg(long)]
        predefined_split: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Compute a non-conformity score table over all nodes
    Score {
        #[command(flatten)]
        data: DataArgs,
        /// Method: tps, tps_classwise, aps, aps_randomized, raps, daps, dtps
        #[arg(long)]
        method: String,
        /// RAPS penalty weight
        #[arg(long)]
        nu: Option<f64>,
        /// RAPS rank offset
        #[arg(long)]
        k_reg: Option<usize>,
        /// Use the rank-based RAPS penalty instead of the literal set count
        #[arg(long)]
        rank_penalty: bool,
        /// Diffusion strength for daps/dtps
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Compute threshold(s) from a score table on the calibration nodes
    Calibrate {
        /// Score table CSV produced by `score`
        #[arg(long)]
        scores: std::path::PathBuf,
        #[arg(long)]
        labels: std::path::PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Split JSON produced by `split`
        #[arg(long)]
        split: std::path::PathBuf,
        /// Calibrate one threshold per class instead of a single quantile
        #[arg(long)]
        classwise: bool,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Build prediction sets for the test nodes from scores and thresholds
    Predict {
        #[arg(long)]
        scores: std::path::PathBuf,
        #[arg(long)]
        calibration: std::path::PathBuf,
        #[arg(long)]
        split: std::path::PathBuf,
        /// Method tag recorded in the output
        #[arg(long, default_value = "unknown")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Compute metrics from prediction sets
    Evaluate {
        /// Prediction sets JSON produced by `predict`/`naps`/`cfgnn-predict`
        #[arg(long)]
        sets: std::path::PathBuf,
        #[arg(long)]
        labels: std::path::PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Report the literal typeset LSC formula (coverage / K) instead of
        /// mean per-class coverage
        #[arg(long)]
        lsc_literal: bool,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Pre-deployment efficiency comparison of two methods via
    /// incorrect-label miscoverage (sufficient condition plus asymptotic
    /// set-size gain)
    Compare {
        /// Experiment config JSON (provides data, split, and method params)
        #[arg(long)]
        config: std::path::PathBuf,
        #[arg(long)]
        method_a: String,
        #[arg(long)]
        method_b: String,
        /// Also measure the paired set-size difference on held-out test
        #[arg(long)]
        empirical: bool,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Neighborhood-adaptive prediction sets with per-test-node weighted
    /// quantiles
    Naps {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        split: std::path::PathBuf,
        /// Maximum hop distance receiving nonzero weight; a comma-separated
        /// list sweeps k and suffixes the output files
        #[arg(long, default_value = "2")]
        k: String,
        /// Weight function: uniform, hyperbolic, or exponential
        #[arg(long, default_value = "uniform")]
        weight: String,
        #[arg(long, default_value_t = 1024)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Train the score-correction model on the calibration nodes
    CfgnnTrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        split: std::path::PathBuf,
        /// Training config JSON; defaults apply for missing fields
        #[arg(long)]
        train_config: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Prediction sets from a trained correction model
    CfgnnPredict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        split: std::path::PathBuf,
        /// Model binary produced by `cfgnn-train`
        #[arg(long)]
        model: std::path::PathBuf,
        /// The training config used by `cfgnn-train` (for the correction
        /// split and eval score); must match, along with --seed
        #[arg(long)]
        train_config: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
    /// Run a (method, alpha, seed) experiment grid from a config file
    Run {
        #[arg(long)]
        config: std::path::PathBuf,
        #[arg(long)]
        out_dir: std::path::PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidAlpha { .. }
        | Error::InvalidConfig(_)
        | Error::UnknownMethod(_)
        | Error::UnknownWeightKind(_)
        | Error::InvalidHopCount(_)
        | Error::InvalidQuantileLevel(_)
        | Error::CalibrationTooSmall(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
