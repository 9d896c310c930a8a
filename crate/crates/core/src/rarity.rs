//! Structural rarity of trigger-graph edges.
//!
//! Nodes get a cheap structural embedding: the mean visit histogram of a few
//! truncated random walks, projected to a low dimension by a fixed Gaussian
//! matrix. DBSCAN over those embeddings yields pseudo-clusters, and an edge
//! joining two pseudo-clusters counts as rare.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph::Graph;
use crate::ldde::ldde_vector;
use crate::rng::{derive_seed, gaussian_matrix, seeded};
use crate::tensor::Matrix;
use crate::watermark::{smallest_abs, WatermarkKey};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RarityConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub embed_dim: usize,
    /// DBSCAN radius as a multiple of the median pairwise distance.
    pub eps_scale: f64,
    pub min_pts: usize,
    /// Share of edges, rarest first, that may enter the key.
    pub rarity_fraction: f64,
    pub seed: u64,
}

impl Default for RarityConfig {
    fn default() -> Self {
        Self { walks_per_node: 10, walk_length: 8, embed_dim: 16, eps_scale: 0.5, min_pts: 4, rarity_fraction: 0.5, seed: 0 }
    }
}

impl RarityConfig {
    fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0 || self.embed_dim == 0 || self.min_pts == 0 {
            return Err(Error::Config("walks_per_node, embed_dim and min_pts must be positive".into()));
        }
        if !(self.rarity_fraction > 0.0 && self.rarity_fraction <= 1.0) {
            return Err(Error::Config(format!("rarity_fraction must lie in (0, 1], got {}", self.rarity_fraction)));
        }
        if !(self.eps_scale > 0.0 && self.eps_scale.is_finite()) {
            return Err(Error::Config(format!("eps_scale must be positive, got {}", self.eps_scale)));
        }
        Ok(())
    }
}

/// One `embed_dim` row per node.
pub fn walk_embeddings(g: &Graph, cfg: &RarityConfig) -> Matrix {
    let n = g.num_nodes();
    let adj = g.adjacency();
    let proj = gaussian_matrix(&mut seeded(derive_seed(cfg.seed, 1)), n, cfg.embed_dim);
    let mut rng = seeded(derive_seed(cfg.seed, 2));
    let visits_per_node = (cfg.walks_per_node * (cfg.walk_length + 1)) as f64;
    let mut out = Matrix::zeros(n, cfg.embed_dim);
    for start in 0..n {
        let row = out.row_mut(start);
        for _ in 0..cfg.walks_per_node {
            let mut at = start;
            for step in 0..=cfg.walk_length {
                if step > 0 && !adj[at].is_empty() {
                    at = adj[at][rng.random_range(0..adj[at].len())];
                }
                for (r, p) in row.iter_mut().zip(proj.row(at)) {
                    *r += p / visits_per_node;
                }
            }
        }
    }
    out
}

/// Pseudo-cluster id per node. Points outside every dense region become
/// singleton clusters.
pub fn dbscan(points: &Matrix, eps: f64, min_pts: usize) -> Vec<usize> {
    const UNSET: usize = usize::MAX;
    let n = points.rows();
    let dist = |a: usize, b: usize| -> f64 {
        points.row(a).iter().zip(points.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| dist(i, j) <= eps).collect()).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut label = vec![UNSET; n];
    let mut next = 0;
    for seed in 0..n {
        if label[seed] != UNSET || !core[seed] {
            continue;
        }
        label[seed] = next;
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbours[p] {
                if label[q] == UNSET {
                    label[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for l in &mut label {
        if *l == UNSET {
            *l = next;
            next += 1;
        }
    }
    label
}

/// Median of all pairwise Euclidean distances.
pub fn median_pairwise_distance(points: &Matrix) -> f64 {
    let n = points.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(points.row(i).iter().zip(points.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

#[derive(Clone, Debug)]
pub struct EdgeRarity {
    pub clusters: Vec<usize>,
    /// Edge indices, rarest first: cross-cluster edges, then by endpoint
    /// embedding distance descending, ties by index.
    pub ranked_edges: Vec<usize>,
    pub cross_cluster: Vec<bool>,
}

pub fn edge_rarity(t: &Graph, cfg: &RarityConfig) -> Result<EdgeRarity> {
    cfg.validate()?;
    let emb = walk_embeddings(t, cfg);
    let eps = cfg.eps_scale * median_pairwise_distance(&emb);
    let clusters = dbscan(&emb, eps, cfg.min_pts);
    let cross_cluster: Vec<bool> = t.edges().iter().map(|&(u, v)| clusters[u] != clusters[v]).collect();
    let spread: Vec<f64> = t
        .edges()
        .iter()
        .map(|&(u, v)| emb.row(u).iter().zip(emb.row(v)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    let mut ranked_edges: Vec<usize> = (0..t.num_edges()).collect();
    ranked_edges.sort_by(|&a, &b| {
        cross_cluster[b].cmp(&cross_cluster[a]).then(spread[b].total_cmp(&spread[a])).then(a.cmp(&b))
    });
    Ok(EdgeRarity { clusters, ranked_edges, cross_cluster })
}

/// Key on a synthetic trigger graph: the rarest `rarity_fraction` of edges are
/// candidates, and the `n_w` of those with LDDE closest to zero are chosen.
pub fn select_key_setting2(t: &Graph, m: &GnnModel, n_w: usize, cfg: &RarityConfig) -> Result<WatermarkKey> {
    let rarity = edge_rarity(t, cfg)?;
    let take = ((cfg.rarity_fraction * t.num_edges() as f64).ceil() as usize).min(t.num_edges());
    let candidates = &rarity.ranked_edges[..take];
    if candidates.len() < n_w {
        return Err(Error::Capacity { needed: n_w, available: candidates.len() });
    }
    let ldde = ldde_vector(&m.predict_proba(t)?, t)?;
    WatermarkKey::new(t.name(), smallest_abs(&ldde, candidates, n_w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{architecture, LayerKind};
    use crate::graph::generate_er;

    fn two_cliques() -> Graph {
        let mut edges = Vec::new();
        for base in [0, 10] {
            for u in 0..10 {
                for v in u + 1..10 {
                    edges.push((base + u, base + v));
                }
            }
        }
        edges.extend([(0, 10), (5, 15)]);
        let x = gaussian_matrix(&mut seeded(0), 20, 4);
        Graph::new("cliques", x, edges, None).unwrap()
    }

    #[test]
    fn bridges_join_pseudo_clusters() {
        let g = two_cliques();
        let r = edge_rarity(&g, &RarityConfig::default()).unwrap();
        let bridges: Vec<usize> =
            g.edges().iter().enumerate().filter(|(_, &(u, v))| (u < 10) != (v < 10)).map(|(i, _)| i).collect();
        assert_eq!(bridges.len(), 2);
        for &b in &bridges {
            assert!(r.cross_cluster[b]);
        }
        // the bridges sit among the rarest edges
        let top = &r.ranked_edges[..r.cross_cluster.iter().filter(|&&c| c).count()];
        assert!(bridges.iter().all(|b| top.contains(b)));
    }

    #[test]
    fn dbscan_two_blobs_and_noise() {
        let pts = Matrix::from_rows(&[
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [0.1, 0.1],
            [5.0, 5.0],
            [5.1, 5.0],
            [5.0, 5.1],
            [5.1, 5.1],
            [20.0, 20.0],
        ]);
        let c = dbscan(&pts, 0.5, 4);
        assert!(c[..4].iter().all(|&l| l == c[0]));
        assert!(c[4..8].iter().all(|&l| l == c[4]));
        assert_ne!(c[0], c[4]);
        assert!(c[8] != c[0] && c[8] != c[4]);
    }

    #[test]
    fn full_fraction_is_plain_smallest_abs() {
        let t = generate_er(40, 0.15, 3, 2).unwrap();
        let m = GnnModel::new(&architecture(LayerKind::MeanAggregate, 3, 8, 3, 2), 1).unwrap();
        let cfg = RarityConfig { rarity_fraction: 1.0, ..Default::default() };
        let key = select_key_setting2(&t, &m, 5, &cfg).unwrap();
        let ldde = ldde_vector(&m.predict_proba(&t).unwrap(), &t).unwrap();
        let all: Vec<usize> = (0..t.num_edges()).collect();
        let mut expected = smallest_abs(&ldde, &all, 5).unwrap();
        expected.sort_unstable();
        assert_eq!(key.edge_indices, expected);
    }

    #[test]
    fn deterministic_per_seed() {
        let t = generate_er(60, 0.1, 3, 4).unwrap();
        let cfg = RarityConfig { seed: 9, ..Default::default() };
        let (a, b) = (edge_rarity(&t, &cfg).unwrap(), edge_rarity(&t, &cfg).unwrap());
        assert_eq!(a.ranked_edges, b.ranked_edges);
        assert_eq!(a.clusters, b.clusters);
    }

    #[test]
    fn too_few_candidates() {
        let t = generate_er(10, 0.3, 3, 1).unwrap();
        let m = GnnModel::new(&architecture(LayerKind::MeanAggregate, 3, 4, 2, 2), 0).unwrap();
        let cfg = RarityConfig { rarity_fraction: 0.1, ..Default::default() };
        assert!(matches!(select_key_setting2(&t, &m, 50, &cfg), Err(Error::Capacity { .. })));
    }
}
