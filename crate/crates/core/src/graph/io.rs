//! On-disk graph format and the CSV importer.
//!
//! A graph file is a JSON object:
//!
//! ```json
//! {"name": "g", "num_nodes": 3, "feature_dim": 2,
//!  "features": [0.5, 1.0, -2.0, 0.0, 3.25, 1e-7],
//!  "edges": [[0, 1], [1, 2]],
//!  "labels": [0, 1, 1]}
//! ```
//!
//! `features` is row-major; every float is written in shortest round-trip
//! form so a reload is bit-exact. Each undirected edge appears once with
//! `u < v`. `labels` is optional.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    #[serde(default)]
    pub name: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        Self {
            name: g.name().to_string(),
            num_nodes: g.num_nodes(),
            feature_dim: g.feature_dim(),
            features: g.features().as_slice().to_vec(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            labels: g.labels().map(<[usize]>::to_vec),
        }
    }
}

impl GraphFile {
    /// Validates every field and builds the graph.
    pub fn into_graph(self) -> Result<Graph> {
        let GraphFile { name, num_nodes, feature_dim, features, edges, labels } = self;
        if features.len() != num_nodes * feature_dim {
            return Err(Error::parse(
                "features",
                format!("expected {num_nodes} x {feature_dim} = {} values, found {}", num_nodes * feature_dim, features.len()),
            ));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(format!("features[{i}]"), "value is not finite"));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (i, &[u, v]) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::parse(
                    format!("edges[{i}]"),
                    format!("endpoint of [{u}, {v}] is not below num_nodes = {num_nodes}"),
                ));
            }
            if u >= v {
                return Err(Error::parse(format!("edges[{i}]"), format!("[{u}, {v}] must satisfy u < v")));
            }
            if !seen.insert((u, v)) {
                return Err(Error::parse(format!("edges[{i}]"), format!("duplicate edge [{u}, {v}]")));
            }
        }
        if let Some(y) = &labels {
            if y.len() != num_nodes {
                return Err(Error::parse("labels", format!("{} labels for {num_nodes} nodes", y.len())));
            }
        }
        let x = Matrix::from_vec(num_nodes, feature_dim, features)?;
        Graph::new(name, x, edges.into_iter().map(|[u, v]| (u, v)), labels)
    }

    pub fn from_json(text: &str) -> Result<Graph> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::parse(json_field(&e), e.to_string()))?;
        file.into_graph()
    }
}

fn json_field(e: &serde_json::Error) -> String {
    // serde reports missing / unknown fields with the name in backticks
    let msg = e.to_string();
    msg.split('`').nth(1).map_or_else(|| "<document>".to_string(), str::to_string)
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string(&GraphFile::from(g))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    GraphFile::from_json(&std::fs::read_to_string(path)?)
}

/// Imports a node CSV (`node_id,feat_0,...,feat_{d-1},label`) and an edge
/// CSV (`src,dst`) keyed by node id. Integer labels are kept as-is; any other
/// label strings are numbered in sorted order. Reverse duplicates and
/// self-loops in the edge file are dropped.
pub fn convert_csv(nodes_csv: impl AsRef<Path>, edges_csv: impl AsRef<Path>, name: &str) -> Result<Graph> {
    let mut reader = csv::Reader::from_path(nodes_csv)?;
    let header = reader.headers()?.clone();
    let has_label = header.iter().last() == Some("label");
    let feature_dim = header.len() - 1 - usize::from(has_label);
    if header.get(0) != Some("node_id") || feature_dim == 0 {
        return Err(Error::parse("nodes header", "expected `node_id,feat_0..feat_{d-1}[,label]`"));
    }

    let mut ids = BTreeMap::new();
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::parse(format!("nodes row {row}"), format!("{} columns, header has {}", rec.len(), header.len())));
        }
        let id = rec[0].to_string();
        if ids.insert(id.clone(), row).is_some() {
            return Err(Error::parse(format!("nodes row {row}"), format!("duplicate node_id `{id}`")));
        }
        for k in 0..feature_dim {
            let v: f64 = rec[k + 1]
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("nodes row {row} feat_{k}"), format!("`{}` is not a number", &rec[k + 1])))?;
            features.push(v);
        }
        if has_label {
            raw_labels.push(rec[feature_dim + 1].trim().to_string());
        }
    }
    let n = ids.len();

    let labels = has_label.then(|| {
        if raw_labels.iter().all(|l| l.parse::<usize>().is_ok()) {
            raw_labels.iter().map(|l| l.parse().unwrap()).collect()
        } else {
            let mut names: Vec<&String> = raw_labels.iter().collect();
            names.sort();
            names.dedup();
            raw_labels.iter().map(|l| names.binary_search(&l).unwrap()).collect()
        }
    });

    let mut edges = Vec::new();
    let mut reader = csv::Reader::from_path(edges_csv)?;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let lookup = |col: usize| -> Result<usize> {
            let key = rec.get(col).unwrap_or("").trim();
            ids.get(key).copied().ok_or_else(|| Error::parse(format!("edges row {row}"), format!("unknown node id `{key}`")))
        };
        let (u, v) = (lookup(0)?, lookup(1)?);
        if u != v {
            edges.push((u, v));
        }
    }
    Graph::new(name, Matrix::from_vec(n, feature_dim, features)?, edges, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmConfig};

    #[test]
    fn edgeless_round_trip() {
        let g = Graph::new("lonely", Matrix::from_rows(&[[0.1, 0.2], [1e-300, -3.5]]), [], None).unwrap();
        let back = GraphFile::from_json(&serde_json::to_string(&GraphFile::from(&g)).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn sbm_round_trip_is_bit_exact() {
        let g = generate_sbm(&SbmConfig { num_nodes: 120, seed: 3, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.labels(), g.labels());
        for (a, b) in back.features().as_slice().iter().zip(g.features().as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn endpoint_out_of_range_names_field() {
        let text = r#"{"name":"g","num_nodes":2,"feature_dim":1,"features":[0.0,1.0],"edges":[[0,1],[1,2]]}"#;
        match GraphFile::from_json(text) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "edges[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feature_count_and_missing_fields_are_named() {
        let text = r#"{"num_nodes":2,"feature_dim":2,"features":[0.0,1.0],"edges":[]}"#;
        assert!(matches!(GraphFile::from_json(text), Err(Error::Parse { field, .. }) if field == "features"));
        let text = r#"{"num_nodes":2,"feature_dim":1,"features":[0.0,1.0]}"#;
        assert!(matches!(GraphFile::from_json(text), Err(Error::Parse { field, .. }) if field == "edges"));
    }

    #[test]
    fn csv_import() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        std::fs::write(dir.join("n.csv"), "node_id,feat_0,feat_1,label\na,1,0,cat\nb,0,1,dog\nc,1,1,cat\n").unwrap();
        std::fs::write(dir.join("e.csv"), "src,dst\na,b\nb,a\nc,b\nc,c\n").unwrap();
        let g = convert_csv(dir.join("n.csv"), dir.join("e.csv"), "tiny").unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.labels().unwrap(), &[0, 1, 0]);
        std::fs::write(dir.join("bad.csv"), "src,dst\na,z\n").unwrap();
        assert!(convert_csv(dir.join("n.csv"), dir.join("bad.csv"), "tiny").is_err());
    }
}
