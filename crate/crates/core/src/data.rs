//! Base-model probabilities, labels, and split assignments, with their
//! on-disk formats.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability row sums; accommodates single-precision softmax
/// exports.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Row-stochastic `|V| x K` matrix of cached base-model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    num_nodes: usize,
    num_classes: usize,
    values: Vec<f64>,
}

impl ProbabilityMatrix {
    /// Validates entry range, row sums, and `K >= 2`.
    pub fn new(num_nodes: usize, num_classes: usize, values: Vec<f64>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::TooFewClasses {
                needed: 2,
                have: num_classes,
            });
        }
        if values.len() != num_nodes * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "expected {} probability entries, got {}",
                num_nodes * num_classes,
                values.len()
            )));
        }
        for row in 0..num_nodes {
            let slice = &values[row * num_classes..(row + 1) * num_classes];
            let mut sum = 0.0;
            for (col, &v) in slice.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ProbabilityOutOfRange { row, col, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowNotStochastic {
                    row,
                    sum,
                    tolerance: ROW_SUM_TOLERANCE,
                });
            }
        }
        Ok(Self {
            num_nodes,
            num_classes,
            values,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.values[node * self.num_classes..(node + 1) * self.num_classes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Parses the CSV format: header `c0,...,c{K-1}`, one row per node.
    pub fn from_csv(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::MalformedRecord {
            line: 1,
            message: "missing header".into(),
        })??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let num_classes = cols.len();
        for (i, name) in cols.iter().enumerate() {
            if *name != format!("c{i}") {
                return Err(Error::MalformedRecord {
                    line: 1,
                    message: format!("expected header column c{i}, got `{name}`"),
                });
            }
        }
        let mut values = Vec::new();
        let mut num_nodes = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != num_classes {
                return Err(Error::MalformedRecord {
                    line: lineno + 2,
                    message: format!("expected {} fields, got {}", num_classes, fields.len()),
                });
            }
            for f in fields {
                values.push(f.parse::<f64>().map_err(|e| Error::MalformedRecord {
                    line: lineno + 2,
                    message: e.to_string(),
                })?);
            }
            num_nodes += 1;
        }
        Self::new(num_nodes, num_classes, values)
    }

    pub fn to_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.num_classes).map(|i| format!("c{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for node in 0..self.num_nodes {
            let row: Vec<String> = self.row(node).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Parses the raw binary format: 8-byte header (`num_nodes`, `K` as
    /// little-endian u32) followed by row-major little-endian f32 values.
    pub fn from_binary(mut reader: impl Read) -> Result<Self> {
        let mut header = [0u8; 8];
        reader.read_exact(&mut header)?;
        let num_nodes = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let num_classes = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let mut buf = vec![0u8; num_nodes * num_classes * 4];
        reader.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(num_nodes, num_classes, values)
    }

    pub fn to_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.num_nodes as u32).to_le_bytes())?;
        w.write_all(&(self.num_classes as u32).to_le_bytes())?;
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }
}

/// Per-node true class labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        for (index, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    index,
                    num_classes,
                });
            }
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    /// Parses one integer per line. With `num_classes = None`, K is inferred
    /// as `max label + 1`.
    pub fn from_lines(reader: impl BufRead, num_classes: Option<usize>) -> Result<Self> {
        let mut labels = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            labels.push(line.parse::<usize>().map_err(|e| Error::MalformedRecord {
                line: lineno + 1,
                message: e.to_string(),
            })?);
        }
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Self::new(labels, k)
    }

    pub fn write_lines(&self, mut w: impl Write) -> Result<()> {
        for &l in &self.labels {
            writeln!(w, "{l}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Disjoint train/valid/calib/test node-id sets.
///
/// Stored sorted; the union may be a strict subset of all nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn new(
        mut train: Vec<usize>,
        mut valid: Vec<usize>,
        mut calib: Vec<usize>,
        mut test: Vec<usize>,
    ) -> Self {
        for part in [&mut train, &mut valid, &mut calib, &mut test] {
            part.sort_unstable();
        }
        Self {
            train,
            valid,
            calib,
            test,
        }
    }

    /// Checks pairwise disjointness and id range.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let parts = [&self.train, &self.valid, &self.calib, &self.test];
        let mut seen = vec![false; num_nodes];
        for part in parts {
            for &id in part {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange { id, num_nodes });
                }
                if seen[id] {
                    return Err(Error::ShapeMismatch(format!(
                        "node {id} appears in more than one split part"
                    )));
                }
                seen[id] = true;
            }
        }
        Ok(())
    }

    /// A split can feed a conformal run only with nonempty calib and test.
    pub fn conformal_ready(&self) -> Result<()> {
        if self.calib.is_empty() {
            return Err(Error::UnusableSplit("calibration set is empty"));
        }
        if self.test.is_empty() {
            return Err(Error::UnusableSplit("test set is empty"));
        }
        Ok(())
    }

    pub fn from_json(reader: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn to_json(&self, w: impl Write) -> Result<()> {
        Ok(serde_json::to_writer_pretty(w, self)?)
    }
}

/// Predefined source split (e.g. a benchmark's train/valid/test files).
///
/// Under FS partitioning, train/valid are drawn from the source train+valid
/// pool and calib/test from the source test pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SourceSplit {
    pub fn from_json(reader: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}
