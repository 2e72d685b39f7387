//! Split conformal prediction for transductive node classification on
//! graphs.
//!
//! The crate covers the full pipeline: dataset partitioning, general and
//! graph-aware non-conformity scores, exact and weighted conformal
//! quantiles, prediction sets and their metrics, a pre-deployment efficiency
//! comparison, and a small trainable score-correction GNN operating on
//! cached base-model probabilities.
//!
//! # Example
//!
//! Build prediction sets with a 90% coverage target on synthetic data:
//!
//! ```
//! use graphcp::conformal::{build_sets, conformal_quantile};
//! use graphcp::metrics::{coverage, efficiency};
//! use graphcp::partition::full_split;
//! use graphcp::rng::RandomPolicy;
//! use graphcp::scores::aps_scores;
//! use graphcp::synth::{generate_sbm, oracle_probabilities};
//!
//! let policy = RandomPolicy::new(7);
//! let (graph, seed_labels) = generate_sbm(400, 4, 0.05, 0.01, &policy)?;
//! let (probs, labels) = oracle_probabilities(&seed_labels, 4, 0.5, &policy)?;
//!
//! let split = full_split(graph.num_nodes(), [0.2, 0.1, 0.35, 0.35], None, &policy)?;
//! let table = aps_scores(&probs, &split.calib, true, &policy)?;
//! let calibration =
//!     conformal_quantile(&table.true_label_scores(&labels, &split.calib)?, 0.1)?;
//!
//! let test_table = aps_scores(&probs, &split.test, true, &policy)?;
//! let sets = build_sets(&test_table, &calibration)?;
//! assert!(coverage(&sets, &labels)? > 0.8);
//! assert!(efficiency(&sets)? <= 4.0);
//! # Ok::<(), graphcp::Error>(())
//! ```

pub mod cfgnn;
pub mod conformal;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod naps;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod scores;
pub mod synth;

mod dense;

pub use error::{Error, Result};
