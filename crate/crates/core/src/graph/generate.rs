//! Seeded random graph models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, gaussian_matrix, seeded};
use crate::tensor::Matrix;

const TOPOLOGY_STREAM: u64 = 1;
const FEATURE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub feature_dim: usize,
    /// Magnitude of each class's mean offset.
    pub feature_shift: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            num_classes: 5,
            intra_p: 0.02,
            inter_p: 0.002,
            feature_dim: 32,
            feature_shift: 1.0,
            seed: 0,
        }
    }
}

/// Stochastic block model with balanced classes (node `i` is in class
/// `i mod C`). Class `c` features are `N(0, I)` shifted by `feature_shift`
/// along a fixed random unit direction drawn for that class.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    let SbmConfig { num_nodes, num_classes, intra_p, inter_p, feature_dim, feature_shift, seed } = *cfg;
    if !(0.0..=1.0).contains(&intra_p) || !(0.0..=1.0).contains(&inter_p) || inter_p >= intra_p {
        return Err(Error::Config(format!(
            "SBM needs 0 <= inter_p < intra_p <= 1, got inter {inter_p}, intra {intra_p}"
        )));
    }
    if num_classes == 0 || num_nodes < num_classes || feature_dim == 0 {
        return Err(Error::Config(format!(
            "SBM needs at least one node per class and a feature dimension; got {num_nodes} nodes, {num_classes} classes, dim {feature_dim}"
        )));
    }
    if !feature_shift.is_finite() {
        return Err(Error::Config("feature shift must be finite".into()));
    }
    let labels: Vec<usize> = (0..num_nodes).map(|i| i % num_classes).collect();

    let mut topo = seeded(derive_seed(seed, TOPOLOGY_STREAM));
    let mut edges = Vec::new();
    for u in 0..num_nodes {
        for v in u + 1..num_nodes {
            let p = if labels[u] == labels[v] { intra_p } else { inter_p };
            if topo.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut feat = seeded(derive_seed(seed, FEATURE_STREAM));
    let directions = unit_rows(gaussian_matrix(&mut feat, num_classes, feature_dim));
    let mut x = gaussian_matrix(&mut feat, num_nodes, feature_dim);
    for (i, &c) in labels.iter().enumerate() {
        for (xv, &d) in x.row_mut(i).iter_mut().zip(directions.row(c)) {
            *xv += feature_shift * d;
        }
    }
    Graph::new(format!("sbm-{seed}"), x, edges, Some(labels))
}

/// Erdos-Renyi `G(n, p)` with standard normal features.
pub fn generate_er(num_nodes: usize, edge_p: f64, feature_dim: usize, seed: u64) -> Result<Graph> {
    if !(edge_p > 0.0 && edge_p < 1.0) {
        return Err(Error::Config(format!("ER edge probability must lie in (0, 1), got {edge_p}")));
    }
    let mut topo = seeded(derive_seed(seed, TOPOLOGY_STREAM));
    let mut edges = Vec::new();
    for u in 0..num_nodes {
        for v in u + 1..num_nodes {
            if topo.random::<f64>() < edge_p {
                edges.push((u, v));
            }
        }
    }
    let x = gaussian_matrix(&mut seeded(derive_seed(seed, FEATURE_STREAM)), num_nodes, feature_dim);
    Graph::new(format!("er-{seed}"), x, edges, None)
}

/// Barabasi-Albert preferential attachment. Starts from a complete graph on
/// `attach_m + 1` seed nodes; every later node links to `attach_m` distinct
/// existing nodes chosen with probability proportional to degree.
pub fn generate_ba(num_nodes: usize, attach_m: usize, feature_dim: usize, seed: u64) -> Result<Graph> {
    if attach_m == 0 || num_nodes <= attach_m {
        return Err(Error::Config(format!(
            "BA needs attach_m >= 1 and num_nodes > attach_m, got m = {attach_m}, n = {num_nodes}"
        )));
    }
    let m0 = attach_m + 1;
    let mut rng = seeded(derive_seed(seed, TOPOLOGY_STREAM));
    let mut edges = Vec::new();
    // each endpoint appears once per incident edge
    let mut endpoints: Vec<usize> = Vec::new();
    for u in 0..m0 {
        for v in u + 1..m0 {
            edges.push((u, v));
            endpoints.extend([u, v]);
        }
    }
    let mut chosen = Vec::with_capacity(attach_m);
    for new in m0..num_nodes {
        chosen.clear();
        while chosen.len() < attach_m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((t, new));
            endpoints.extend([t, new]);
        }
    }
    let x = gaussian_matrix(&mut seeded(derive_seed(seed, FEATURE_STREAM)), num_nodes, feature_dim);
    Graph::new(format!("ba-{seed}"), x, edges, None)
}

fn unit_rows(mut m: Matrix) -> Matrix {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    m
}
