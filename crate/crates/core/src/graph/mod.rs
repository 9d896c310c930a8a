//! Undirected attributed graphs and their constructors.

mod generate;
mod io;
mod split;

use std::sync::Arc;

pub use generate::{generate_ba, generate_er, generate_sbm, SbmConfig};
pub use io::{convert_csv, load_graph, save_graph, GraphFile};
pub use split::{induced_split, induced_subgraph, Split, SplitSpec};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Node features, an undirected edge set and optional class labels.
///
/// Each undirected edge `{u, v}` is held once in canonical `(min, max)` form,
/// sorted lexicographically; [`Graph::directed_edges`] expands both
/// directions. The canonical position of an edge is its *edge index*, which
/// watermark keys refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    name: String,
    features: Matrix,
    edges: Arc<Vec<(usize, usize)>>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from edges in either orientation. Duplicates and
    /// reversed duplicates collapse; self-loops and out-of-range endpoints
    /// are rejected.
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u}, {v}) has an endpoint outside 0..{n}")));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(Error::Graph(format!("{} labels for {n} nodes", y.len())));
            }
        }
        if !features.is_finite() {
            return Err(Error::Graph("non-finite feature value".into()));
        }
        Ok(Self { name: name.into(), features, edges: Arc::new(canon), labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of classes implied by the labels (largest label + 1).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|y| y.iter().max().map_or(0, |m| m + 1))
    }

    /// Canonical undirected edges, `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn shared_edges(&self) -> Arc<Vec<(usize, usize)>> {
        Arc::clone(&self.edges)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Both orientations of every edge, sorted.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self.edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        out.sort_unstable();
        out
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in self.edges.iter() {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &(u, v) in self.edges.iter() {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Same topology and labels with replaced features.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_nodes() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.num_nodes()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Graph("non-finite feature value".into()));
        }
        Ok(Self { features, ..self.clone() })
    }

    pub fn with_labels(&self, labels: Option<Vec<usize>>) -> Result<Self> {
        Self::new(self.name.clone(), self.features.clone(), self.edges.iter().copied(), labels)
    }

    pub fn without_labels(&self) -> Self {
        Self { labels: None, ..self.clone() }
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Usage(format!("graph `{}` has no labels", self.name)))
    }

    /// Unordered edges whose endpoints carry different labels.
    pub fn cross_label_edges(&self) -> Result<Vec<usize>> {
        let y = self.require_labels()?;
        Ok(self.edges.iter().enumerate().filter(|(_, &(u, v))| y[u] != y[v]).map(|(i, _)| i).collect())
    }
}
