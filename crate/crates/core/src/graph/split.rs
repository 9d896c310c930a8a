use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.70, val: 0.20, test: 0.10, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {fr:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Graph,
    pub val: Graph,
    pub test: Graph,
    /// Original node index of every node in each part, in part order.
    pub train_nodes: Vec<usize>,
    pub val_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
}

/// Partitions the nodes of a labeled graph at random and returns the three
/// node-induced subgraphs. Edges crossing partitions are dropped.
pub fn induced_split(g: &Graph, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    g.require_labels()?;
    let n = g.num_nodes();
    let n_train = (spec.train * n as f64).round() as usize;
    let n_val = (spec.val * n as f64).round() as usize;
    let n_test = n.checked_sub(n_train + n_val).unwrap_or(0);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} nodes gives {n_train}/{n_val}/{n_test}; every part needs at least one node"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(spec.seed));
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train_nodes, val_nodes, test_nodes] = parts;
    Ok(Split {
        train: induced_subgraph(g, &train_nodes, format!("{}-train", g.name()))?,
        val: induced_subgraph(g, &val_nodes, format!("{}-val", g.name()))?,
        test: induced_subgraph(g, &test_nodes, format!("{}-test", g.name()))?,
        train_nodes,
        val_nodes,
        test_nodes,
    })
}

/// Subgraph on `nodes` (remapped to `0..nodes.len()` in the given order)
/// keeping exactly the edges with both endpoints inside.
pub fn induced_subgraph(g: &Graph, nodes: &[usize], name: impl Into<String>) -> Result<Graph> {
    let mut remap = vec![usize::MAX; g.num_nodes()];
    for (new, &old) in nodes.iter().enumerate() {
        if old >= g.num_nodes() {
            return Err(Error::Index { index: old, len: g.num_nodes() });
        }
        if remap[old] != usize::MAX {
            return Err(Error::Graph(format!("node {old} listed twice in subgraph selection")));
        }
        remap[old] = new;
    }
    let features = g.features().select_rows(nodes);
    let edges = g
        .edges()
        .iter()
        .filter(|&&(u, v)| remap[u] != usize::MAX && remap[v] != usize::MAX)
        .map(|&(u, v)| (remap[u], remap[v]));
    let labels = g.labels().map(|y| nodes.iter().map(|&i| y[i]).collect());
    Graph::new(name, features, edges, labels)
}
