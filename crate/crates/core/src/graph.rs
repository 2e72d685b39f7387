//! Immutable CSR adjacency over 0-based node ids.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Compressed sparse row adjacency.
///
/// Duplicates and self-loops are removed at construction; column indices are
/// sorted within each row. When `is_symmetrized` is set, edge `(u, v)` is
/// present iff `(v, u)` is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    is_symmetrized: bool,
}

impl Graph {
    /// Builds a CSR graph from a directed edge list.
    ///
    /// Self-loops and duplicate edges are dropped. With `symmetrize`, the
    /// reverse of every edge is inserted as well.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        symmetrize: bool,
    ) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange { id, num_nodes });
                }
            }
            if u == v {
                continue;
            }
            pairs.push((u, v));
            if symmetrize {
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            row_offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = pairs.into_iter().map(|(_, v)| v).collect();

        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            is_symmetrized: symmetrize,
        })
    }

    /// Parses a `u<TAB>v` edge list (one pair per line, 0-based ids).
    ///
    /// Blank lines are skipped. When `num_nodes` is `None` it is inferred as
    /// `max id + 1`; otherwise ids at or above the declared count are errors.
    pub fn parse_edge_list(
        reader: impl BufRead,
        num_nodes: Option<usize>,
        symmetrize: bool,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_id = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.ok_or_else(|| Error::MalformedRecord {
                    line: lineno + 1,
                    message: "expected `u<TAB>v`".into(),
                })?
                .parse::<usize>()
                .map_err(|e| Error::MalformedRecord {
                    line: lineno + 1,
                    message: e.to_string(),
                })
            };
            let u = parse(it.next())?;
            let v = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::MalformedRecord {
                    line: lineno + 1,
                    message: "trailing fields after `u<TAB>v`".into(),
                });
            }
            max_id = max_id.max(u).max(v);
            edges.push((u, v));
        }
        let n = num_nodes.unwrap_or(if edges.is_empty() { 0 } else { max_id + 1 });
        Self::from_edges(n, edges, symmetrize)
    }

    /// Writes the stored (directed) edges as `u<TAB>v` lines in CSR order.
    ///
    /// Reloading the output with `symmetrize = false` and the same node count
    /// reproduces the CSR arrays exactly.
    pub fn write_edge_list(&self, mut w: impl Write) -> Result<()> {
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                writeln!(w, "{u}\t{v}")?;
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_directed_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn is_symmetrized(&self) -> bool {
        self.is_symmetrized
    }

    pub fn degree(&self, node: usize) -> usize {
        self.row_offsets[node + 1] - self.row_offsets[node]
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_degrees() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2)], true).unwrap();
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.degree(1), 2);
        assert_eq!(g.degree(2), 1);
        assert!(g.is_symmetrized());
    }

    #[test]
    fn duplicates_and_self_loops_removed() {
        let g = Graph::from_edges(3, [(0, 1), (0, 1), (2, 2)], false).unwrap();
        assert_eq!(g.num_directed_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.degree(2), 0);
    }

    #[test]
    fn out_of_range_id_rejected() {
        let err = Graph::from_edges(2, [(0, 5)], false).unwrap_err();
        assert!(matches!(err, Error::NodeOutOfRange { id: 5, .. }));
    }

    #[test]
    fn symmetrize_invariant() {
        let g = Graph::from_edges(4, [(0, 1), (2, 3), (3, 1)], true).unwrap();
        for u in 0..4 {
            for &v in g.neighbors(u) {
                assert!(g.neighbors(v).contains(&u));
            }
        }
    }

    #[test]
    fn parse_rejects_malformed() {
        let text = "0\t1\nnot-a-number\t2\n";
        let err = Graph::parse_edge_list(text.as_bytes(), Some(3), false).unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 2, .. }));
    }

    #[test]
    fn parse_and_save_round_trip() {
        let text = "0\t1\n1\t2\n3\t0\n";
        let g = Graph::parse_edge_list(text.as_bytes(), Some(4), true).unwrap();
        let mut out = Vec::new();
        g.write_edge_list(&mut out).unwrap();
        let reloaded = Graph::parse_edge_list(out.as_slice(), Some(4), false).unwrap();
        assert_eq!(g.row_offsets(), reloaded.row_offsets());
        assert_eq!(g.col_indices(), reloaded.col_indices());

        let mut out2 = Vec::new();
        reloaded.write_edge_list(&mut out2).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn arxiv_scale_ingest_accepted() {
        // Same node and edge counts as the largest citation benchmark we target.
        let n = 169_343usize;
        let m = 1_166_243usize;
        let edges = (0..m).map(|i| {
            let u = i % n;
            let off = i / n + 1;
            (u, (u + off) % n)
        });
        let g = Graph::from_edges(n, edges, false).unwrap();
        assert_eq!(g.num_nodes(), n);
        assert_eq!(g.num_directed_edges(), m);
    }
}
