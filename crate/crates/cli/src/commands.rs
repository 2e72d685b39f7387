//! Subcommand implementations.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use graphcp::cfgnn::{self, CfgnnTrainConfig};
use graphcp::conformal::{
    build_sets, classwise_quantiles, conformal_quantile, CalibrationResult, EfficiencyComparison,
    PredictionSets,
};
use graphcp::data::{LabelVector, SourceSplit, SplitAssignment};
use graphcp::error::{Error, Result};
use graphcp::experiment::{
    aggregate, aggregate_csv, load_dataset, make_split, report_file_name, run_grid, DataPaths,
    ExperimentConfig, MethodSpec, Report,
};
use graphcp::metrics::{
    coverage, efficiency, label_stratified_coverage, label_stratified_coverage_literal,
};
use graphcp::naps::{naps_calibrate, NapsConfig, WeightKind};
use graphcp::partition::{full_split, label_count_split};
use graphcp::pipeline::{compare_methods, Dataset};
use graphcp::rng::RandomPolicy;
use graphcp::scores::{aps_scores, ScoreTable};
use graphcp::synth::{generate_sbm, oracle_probabilities};

use crate::{Command, DataArgs, SplitStyleArgs};

/// On-disk layout for prediction sets.
#[derive(Serialize, Deserialize)]
struct PredictionSetsFile {
    method: String,
    alpha: f64,
    seed: u64,
    num_classes: usize,
    node_ids: Vec<usize>,
    sets: Vec<Vec<usize>>,
}

impl PredictionSetsFile {
    fn from_sets(sets: &PredictionSets, method: &str, alpha: f64, seed: u64) -> Self {
        Self {
            method: method.to_string(),
            alpha,
            seed,
            num_classes: sets.num_classes(),
            node_ids: sets.node_ids().to_vec(),
            sets: (0..sets.num_rows()).map(|r| sets.labels_of(r)).collect(),
        }
    }

    fn to_sets(&self) -> Result<PredictionSets> {
        PredictionSets::from_label_lists(self.node_ids.clone(), self.num_classes, &self.sets)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(
        path,
    )?))?)
}

fn load_data_args(args: &DataArgs) -> Result<Dataset> {
    load_dataset(&DataPaths {
        edges: args.edges.clone(),
        probabilities: args.probs.clone(),
        labels: args.labels.clone(),
        num_nodes: args.num_nodes,
        num_classes: args.num_classes,
        symmetrize: !args.no_symmetrize,
        predefined_split: args.predefined_split.clone(),
    })
}

fn load_labels(path: &Path, num_classes: Option<usize>) -> Result<LabelVector> {
    LabelVector::from_lines(BufReader::new(fs::File::open(path)?), num_classes)
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn parse_fractions(text: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::InvalidConfig(format!(
            "expected 4 comma-separated fractions, got `{text}`"
        )));
    }
    let mut out = [0.0; 4];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::InvalidConfig(format!("bad fraction `{part}`: {e}")))?;
    }
    Ok(out)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha { alpha });
    }
    Ok(())
}

fn evaluate_sets(
    sets: &PredictionSets,
    labels: &LabelVector,
    method: &str,
    alpha: f64,
    seed: u64,
    lsc_literal: bool,
) -> Result<Report> {
    let (lsc_mean, per_class) = label_stratified_coverage(sets, labels)?;
    let lsc = if lsc_literal {
        label_stratified_coverage_literal(sets, labels)?
    } else {
        lsc_mean
    };
    Ok(Report {
        coverage: coverage(sets, labels)?,
        efficiency: efficiency(sets)?,
        lsc,
        per_class_coverage: per_class,
        alpha,
        method: method.to_string(),
        seed,
    })
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            num_nodes,
            num_classes,
            intra,
            inter,
            noise,
            binary_probs,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            let policy = RandomPolicy::new(seed);
            let (graph, seed_labels) = generate_sbm(num_nodes, num_classes, intra, inter, &policy)?;
            let (probs, labels) = oracle_probabilities(&seed_labels, num_classes, noise, &policy)?;
            graph.write_edge_list(BufWriter::new(fs::File::create(out_dir.join("edges.tsv"))?))?;
            labels.write_lines(BufWriter::new(fs::File::create(
                out_dir.join("labels.txt"),
            )?))?;
            if binary_probs {
                probs.to_binary(BufWriter::new(fs::File::create(out_dir.join("probs.bin"))?))?;
            } else {
                probs.to_csv(BufWriter::new(fs::File::create(out_dir.join("probs.csv"))?))?;
            }
            println!(
                "wrote {} nodes, {} directed edges, {} classes to {}",
                graph.num_nodes(),
                graph.num_directed_edges(),
                num_classes,
                out_dir.display()
            );
            Ok(())
        }

        Command::Split {
            labels,
            num_classes,
            style,
            predefined_split,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            let labels = load_labels(&labels, num_classes)?;
            let policy = RandomPolicy::new(seed);
            let split = make_cli_split(&labels, &style, predefined_split.as_deref(), &policy)?;
            let path = out_dir.join("splits.json");
            write_json(&path, &split)?;
            println!(
                "split sizes: train {}, valid {}, calib {}, test {}",
                split.train.len(),
                split.valid.len(),
                split.calib.len(),
                split.test.len()
            );
            Ok(())
        }

        Command::Score {
            data,
            method,
            nu,
            k_reg,
            rank_penalty,
            delta,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            let dataset = load_data_args(&data)?;
            let spec = MethodSpec {
                nu,
                k_reg,
                rank_penalty: Some(rank_penalty),
                delta,
                ..MethodSpec::named(&method)
            };
            let policy = RandomPolicy::new(seed);
            let table = graphcp::pipeline::compute_scores(&dataset, &spec.to_method()?, &policy)?;
            let path = out_dir.join("scores.csv");
            table.to_csv(BufWriter::new(fs::File::create(&path)?))?;
            println!(
                "wrote {} score rows to {}",
                table.num_rows(),
                path.display()
            );
            Ok(())
        }

        Command::Calibrate {
            scores,
            labels,
            num_classes,
            split,
            classwise,
            alpha,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            check_alpha(alpha)?;
            let table =
                ScoreTable::from_csv(BufReader::new(fs::File::open(&scores)?), "file", false)?;
            let labels = load_labels(&labels, num_classes.or(Some(table.num_classes())))?;
            let split: SplitAssignment = read_json(&split)?;
            split.conformal_ready()?;
            let truth = table.true_label_scores(&labels, &split.calib)?;
            let calibration = if classwise {
                let calib_labels: Vec<usize> =
                    split.calib.iter().map(|&v| labels.label(v)).collect();
                classwise_quantiles(&truth, &calib_labels, alpha, table.num_classes())?
            } else {
                conformal_quantile(&truth, alpha)?
            };
            write_json(&out_dir.join("calibration.json"), &calibration)?;
            Ok(())
        }

        Command::Predict {
            scores,
            calibration,
            split,
            method,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            let table = ScoreTable::from_csv(
                BufReader::new(fs::File::open(&scores)?),
                method.clone(),
                false,
            )?;
            let calibration: CalibrationResult = read_json(&calibration)?;
            let split: SplitAssignment = read_json(&split)?;
            split.conformal_ready()?;
            let sets = build_sets(&table.subset(&split.test)?, &calibration)?;
            let file = PredictionSetsFile::from_sets(&sets, &method, calibration.alpha, seed);
            write_json(&out_dir.join("sets.json"), &file)?;
            Ok(())
        }

        Command::Evaluate {
            sets,
            labels,
            num_classes,
            lsc_literal,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            let file: PredictionSetsFile = read_json(&sets)?;
            let labels = load_labels(&labels, num_classes.or(Some(file.num_classes)))?;
            let sets = file.to_sets()?;
            let report = evaluate_sets(
                &sets,
                &labels,
                &file.method,
                file.alpha,
                file.seed,
                lsc_literal,
            )?;
            write_json(&out_dir.join("report.json"), &report)?;
            println!(
                "coverage {:.4}, efficiency {:.4}, lsc {:.4}",
                report.coverage, report.efficiency, report.lsc
            );
            Ok(())
        }

        Command::Compare {
            config,
            method_a,
            method_b,
            empirical,
            alpha,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            check_alpha(alpha)?;
            let config = ExperimentConfig::from_json_file(&config)?;
            let dataset = load_dataset(&config.data)?;
            let find = |name: &str| -> MethodSpec {
                config
                    .methods
                    .iter()
                    .find(|m| m.name == name)
                    .cloned()
                    .unwrap_or_else(|| MethodSpec::named(name))
            };
            let policy = RandomPolicy::new(seed);
            let split = make_split(&dataset, &config.split, &policy)?;
            let (comparison, empirical_gap) = compare_methods(
                &dataset,
                &find(&method_a).to_method()?,
                &find(&method_b).to_method()?,
                &split,
                alpha,
                &policy,
                empirical,
            )?;
            let report = CompareReport::new(
                &method_a,
                &method_b,
                alpha,
                seed,
                &comparison,
                empirical_gap,
            );
            write_json(&out_dir.join("compare.json"), &report)?;
            println!(
                "alpha_c({method_a}) = {:.4}, alpha_c({method_b}) = {:.4}, condition_met = {}, asymptotic_gain = {:.4}",
                comparison.alpha_c_a,
                comparison.alpha_c_atilde,
                comparison.condition_met,
                comparison.asymptotic_gain
            );
            Ok(())
        }

        Command::Naps {
            data,
            split,
            k,
            weight,
            batch_size,
            alpha,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            check_alpha(alpha)?;
            let hops: Vec<usize> = k
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::InvalidConfig(format!("bad hop count `{tok}`: {e}")))
                })
                .collect::<Result<_>>()?;
            let sweep = hops.len() > 1;
            let dataset = load_data_args(&data)?;
            let split: SplitAssignment = read_json(&split)?;
            let policy = RandomPolicy::new(seed);
            let test_table = aps_scores(&dataset.probs, &split.test, false, &policy)?;
            for hop in hops {
                let config = NapsConfig {
                    k: hop,
                    weight_kind: WeightKind::parse(&weight)?,
                    batch_size,
                };
                let calibration = naps_calibrate(
                    &dataset.graph,
                    &dataset.probs,
                    &dataset.labels,
                    &split,
                    &config,
                    alpha,
                    &policy,
                )?;
                let sets = build_sets(&test_table, &calibration)?;
                let file = PredictionSetsFile::from_sets(&sets, "naps", alpha, seed);
                let report = evaluate_sets(&sets, &dataset.labels, "naps", alpha, seed, false)?;
                let suffix = if sweep {
                    format!("_k{hop}")
                } else {
                    String::new()
                };
                write_json(
                    &out_dir.join(format!("calibration{suffix}.json")),
                    &calibration,
                )?;
                write_json(&out_dir.join(format!("sets{suffix}.json")), &file)?;
                write_json(&out_dir.join(format!("report{suffix}.json")), &report)?;
                println!(
                    "naps k={hop} weight={weight}: coverage {:.4}, efficiency {:.4}",
                    report.coverage, report.efficiency
                );
            }
            Ok(())
        }

        Command::CfgnnTrain {
            data,
            split,
            train_config,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            let dataset = load_data_args(&data)?;
            let split: SplitAssignment = read_json(&split)?;
            let config: CfgnnTrainConfig = match train_config {
                Some(path) => read_json(&path)?,
                None => CfgnnTrainConfig::default(),
            };
            let policy = RandomPolicy::new(seed);
            let outcome = cfgnn::train(
                &dataset.graph,
                &dataset.probs,
                &dataset.labels,
                &split.calib,
                &config,
                &policy,
            )?;
            let model_path = out_dir.join("model.bin");
            outcome
                .model
                .write_binary(BufWriter::new(fs::File::create(&model_path)?))?;
            let mut log = String::from("epoch,loss,val_efficiency\n");
            for record in &outcome.log {
                log.push_str(&format!(
                    "{},{:.6},{:.6}\n",
                    record.epoch, record.mean_loss, record.val_inefficiency
                ));
            }
            fs::write(out_dir.join("train_log.csv"), log)?;
            println!(
                "best epoch {} with validation inefficiency {:.4}; model at {}",
                outcome.best_epoch,
                outcome.log[outcome.best_epoch].val_inefficiency,
                model_path.display()
            );
            Ok(())
        }

        Command::CfgnnPredict {
            data,
            split,
            model,
            train_config,
            seed,
            out_dir,
        } => {
            ensure_out_dir(&out_dir)?;
            let dataset = load_data_args(&data)?;
            let split: SplitAssignment = read_json(&split)?;
            split.conformal_ready()?;
            let config: CfgnnTrainConfig = match train_config {
                Some(path) => read_json(&path)?,
                None => CfgnnTrainConfig::default(),
            };
            let model = cfgnn::CfgnnModel::read_binary(BufReader::new(fs::File::open(&model)?))?;
            let policy = RandomPolicy::new(seed);
            // The same (calib, fraction, seed) reproduces the training-time
            // correction split, keeping the final quantile on held-out nodes.
            let (_, cor_test) =
                cfgnn::split_correction_nodes(&split.calib, config.cor_cal_fraction, &policy)?;
            let sets = cfgnn::cfgnn_predict(
                &model,
                &dataset.graph,
                &dataset.probs,
                &dataset.labels,
                &cor_test,
                &split.test,
                config.eval_score,
                config.alpha,
                &policy,
            )?;
            let method = format!("cfgnn_{}", config.eval_score.name());
            let file = PredictionSetsFile::from_sets(&sets, &method, config.alpha, seed);
            write_json(&out_dir.join("sets.json"), &file)?;
            let report = evaluate_sets(&sets, &dataset.labels, &method, config.alpha, seed, false)?;
            write_json(&out_dir.join("report.json"), &report)?;
            println!(
                "cfgnn: coverage {:.4}, efficiency {:.4}",
                report.coverage, report.efficiency
            );
            Ok(())
        }

        Command::Run { config, out_dir } => {
            ensure_out_dir(&out_dir)?;
            let config = ExperimentConfig::from_json_file(&config)?;
            for &alpha in &config.alphas {
                check_alpha(alpha)?;
            }
            let dataset = load_dataset(&config.data)?;
            let reports = run_grid(&dataset, &config)?;
            for report in &reports {
                write_json(&out_dir.join(report_file_name(report)), report)?;
            }
            let csv = aggregate_csv(&aggregate(&reports));
            fs::write(out_dir.join("aggregate.csv"), &csv)?;
            println!(
                "{} reports, aggregate rows written to {}",
                reports.len(),
                out_dir.join("aggregate.csv").display()
            );
            Ok(())
        }
    }
}

fn make_cli_split(
    labels: &LabelVector,
    style: &SplitStyleArgs,
    predefined: Option<&Path>,
    policy: &RandomPolicy,
) -> Result<SplitAssignment> {
    match style.style.as_str() {
        "fs" => {
            let fractions = parse_fractions(&style.fractions)?;
            let source = match predefined {
                Some(path) => Some(SourceSplit::from_json(fs::File::open(path)?)?),
                None => None,
            };
            full_split(labels.len(), fractions, source.as_ref(), policy)
        }
        "lc" => label_count_split(labels, style.per_class, policy),
        other => Err(Error::InvalidConfig(format!(
            "unknown split style `{other}` (expected fs or lc)"
        ))),
    }
}

/// Comparison report with the auditability fields spelled out.
#[derive(Serialize, Deserialize)]
struct CompareReport {
    method_a: String,
    method_b: String,
    alpha: f64,
    seed: u64,
    n_calib: usize,
    num_classes: usize,
    alpha_c_a: f64,
    alpha_c_b: f64,
    gap: f64,
    two_over_n_plus_one: f64,
    condition_met: bool,
    asymptotic_gain: f64,
    empirical_mean_size_diff: Option<f64>,
}

impl CompareReport {
    fn new(
        method_a: &str,
        method_b: &str,
        alpha: f64,
        seed: u64,
        comparison: &EfficiencyComparison,
        empirical_gap: Option<f64>,
    ) -> Self {
        Self {
            method_a: method_a.to_string(),
            method_b: method_b.to_string(),
            alpha,
            seed,
            n_calib: comparison.n_calib,
            num_classes: comparison.num_classes,
            alpha_c_a: comparison.alpha_c_a,
            alpha_c_b: comparison.alpha_c_atilde,
            gap: comparison.alpha_c_a - comparison.alpha_c_atilde,
            two_over_n_plus_one: 2.0 / (comparison.n_calib as f64 + 1.0),
            condition_met: comparison.condition_met,
            asymptotic_gain: comparison.asymptotic_gain,
            empirical_mean_size_diff: empirical_gap,
        }
    }
}
