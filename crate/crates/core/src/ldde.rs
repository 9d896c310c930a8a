//! Per-edge distance differences between prediction space and feature space.
//!
//! For an edge `(u, v)` the value is `cos(Y_u, Y_v) - cos(X_u, X_v)`, where
//! `Y` is the row-standardized log of the predicted probabilities. Its sign
//! carries one watermark bit.

use std::sync::Arc;

use crate::autodiff::{row_standardize, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{cosine, Matrix};

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// LDDE value per unordered edge, in canonical edge order.
#[derive(Clone, Debug, PartialEq)]
pub struct LddeVector(pub Vec<f64>);

impl LddeVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, edge: usize) -> Result<f64> {
        self.0.get(edge).copied().ok_or(Error::Index { index: edge, len: self.0.len() })
    }

    pub fn abs_mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|v| v.abs()).sum::<f64>() / self.0.len() as f64
    }
}

/// `(ln p - mean) / std` per row with the unbiased std; probabilities below
/// [`PROB_FLOOR`] are clamped first.
pub fn transform_predictions(probs: &Matrix) -> Result<Matrix> {
    let logs = probs.map(|p| p.max(PROB_FLOOR).ln());
    Ok(row_standardize(&logs)?.0)
}

fn pair_cosines(m: &Matrix, pairs: &[(usize, usize)], what: &str) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(u, v)| {
            if u >= m.rows() || v >= m.rows() {
                return Err(Error::Index { index: u.max(v), len: m.rows() });
            }
            cosine(m.row(u), m.row(v)).ok_or_else(|| {
                let node = if m.row(u).iter().all(|&x| x == 0.0) { u } else { v };
                Error::Numeric(format!("zero-norm {what} row at node {node}"))
            })
        })
        .collect()
}

fn check_rows(probs: &Matrix, g: &Graph) -> Result<()> {
    if probs.rows() != g.num_nodes() {
        return Err(Error::Dimension(format!(
            "{} prediction rows for graph `{}` with {} nodes",
            probs.rows(),
            g.name(),
            g.num_nodes()
        )));
    }
    Ok(())
}

/// LDDE over every edge of `g` from predicted probabilities.
pub fn ldde_vector(probs: &Matrix, g: &Graph) -> Result<LddeVector> {
    check_rows(probs, g)?;
    ldde_from_transformed(&transform_predictions(probs)?, g.features(), g.edges())
}

/// LDDE computed by standardizing logits directly, skipping softmax and log.
pub fn ldde_from_logits(logits: &Matrix, g: &Graph) -> Result<LddeVector> {
    check_rows(logits, g)?;
    ldde_from_transformed(&row_standardize(logits)?.0, g.features(), g.edges())
}

/// LDDE on selected node pairs only. Rows of `probs` that no pair touches are
/// never transformed, so they may be degenerate.
pub fn ldde_on_pairs(probs: &Matrix, features: &Matrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    if probs.rows() != features.rows() {
        return Err(Error::Dimension(format!("{} prediction rows for {} feature rows", probs.rows(), features.rows())));
    }
    let mut nodes: Vec<usize> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    if let Some(&bad) = nodes.iter().find(|&&i| i >= probs.rows()) {
        return Err(Error::Index { index: bad, len: probs.rows() });
    }
    let y = transform_predictions(&probs.select_rows(&nodes))?;
    let local = |i: usize| nodes.binary_search(&i).expect("node collected above");
    let local_pairs: Vec<(usize, usize)> = pairs.iter().map(|&(u, v)| (local(u), local(v))).collect();
    let pred = pair_cosines(&y, &local_pairs, "prediction")?;
    let feat = pair_cosines(features, pairs, "feature")?;
    Ok(pred.iter().zip(&feat).map(|(p, f)| p - f).collect())
}

fn ldde_from_transformed(y: &Matrix, x: &Matrix, edges: &[(usize, usize)]) -> Result<LddeVector> {
    let pred = pair_cosines(y, edges, "prediction")?;
    let feat = pair_cosines(x, edges, "feature")?;
    Ok(LddeVector(pred.iter().zip(&feat).map(|(p, f)| p - f).collect()))
}

/// Records LDDE on `pairs` as an `n_pairs x 1` column. `probs` are softmax
/// outputs and `x` node features; either may be a constant.
pub fn record_ldde(tape: &mut Tape, probs: Var, x: Var, pairs: Arc<Vec<(usize, usize)>>) -> Result<Var> {
    let logs = tape.ln_clamped(probs, PROB_FLOOR);
    let y = tape.row_standardize(logs)?;
    let pred = tape.pair_cosine(y, Arc::clone(&pairs))?;
    let feat = tape.pair_cosine(x, pairs)?;
    tape.sub(pred, feat)
}

/// `false` (bit 0) for a negative value, `true` (bit 1) otherwise.
pub fn signal_bit(value: f64) -> bool {
    value >= 0.0
}

/// Bits read from the LDDE values at the key's edge indices.
pub fn signal(v: &LddeVector, key: &[usize]) -> Result<Vec<bool>> {
    key.iter().map(|&i| v.get(i).map(signal_bit)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::row_softmax;
    use crate::gradcheck::grad_check;
    use crate::rng::{gaussian_matrix, seeded, uniform_matrix};

    #[test]
    fn transform_matches_standardized_logits() {
        let mut rng = seeded(3);
        for _ in 0..20 {
            let z = uniform_matrix(&mut rng, 6, 5, 10.0);
            let a = transform_predictions(&row_softmax(&z)).unwrap();
            let b = row_standardize(&z).unwrap().0;
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-9);
            }
            for row in a.iter_rows() {
                let mean = row.iter().sum::<f64>() / 5.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
                assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_class_row_by_hand() {
        let out = transform_predictions(&Matrix::from_rows(&[[0.9, 0.1]])).unwrap();
        let (a, b) = (0.9f64.ln(), 0.1f64.ln());
        let mean = (a + b) / 2.0;
        let sd = (((a - mean).powi(2) + (b - mean).powi(2)) / 1.0).sqrt();
        assert!((out[(0, 0)] - (a - mean) / sd).abs() < 1e-12);
        assert!((out[(0, 1)] - (b - mean) / sd).abs() < 1e-12);
        // two classes always standardize to +-1/sqrt(2)
        assert!((out[(0, 0)] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let out = transform_predictions(&Matrix::from_rows(&[[1.0, 0.0, 0.0]])).unwrap();
        assert!(out.is_finite());
        assert!(transform_predictions(&Matrix::from_rows(&[[0.5, 0.5]])).is_err());
    }

    #[test]
    fn identical_endpoints_give_zero() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]);
        let g = Graph::new("twin", x, [(0, 1)], None).unwrap();
        let p = Matrix::from_rows(&[[0.7, 0.2, 0.1], [0.7, 0.2, 0.1]]);
        let v = ldde_vector(&p, &g).unwrap();
        assert!(v.values()[0].abs() < 1e-15);
    }

    #[test]
    fn path_graph_by_hand() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let g = Graph::new("path3", x, [(0, 1), (1, 2)], None).unwrap();
        let p = Matrix::from_rows(&[[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.1, 0.8]]);
        // standardized log-probability rows computed independently
        let std_row = |r: [f64; 3]| {
            let l = r.map(f64::ln);
            let m = (l[0] + l[1] + l[2]) / 3.0;
            let s = (l.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0).sqrt();
            l.map(|v| (v - m) / s)
        };
        let y = [std_row([0.6, 0.3, 0.1]), std_row([0.2, 0.5, 0.3]), std_row([0.1, 0.1, 0.8])];
        let cos3 = |a: [f64; 3], b: [f64; 3]| {
            let d: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
            d / (a.iter().map(|v| v * v).sum::<f64>().sqrt() * b.iter().map(|v| v * v).sum::<f64>().sqrt())
        };
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [cos3(y[0], y[1]) - inv_sqrt2, cos3(y[1], y[2]) - inv_sqrt2];
        let v = ldde_vector(&p, &g).unwrap();
        for (a, b) in v.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
        for &val in v.values() {
            assert!((-2.0..=2.0).contains(&val));
        }
    }

    #[test]
    fn pair_subset_matches_full_vector() {
        let mut rng = seeded(12);
        let x = gaussian_matrix(&mut rng, 7, 3);
        let g = Graph::new("g", x.clone(), [(0, 1), (1, 2), (2, 6), (3, 4), (5, 6)], None).unwrap();
        let mut p = row_softmax(&gaussian_matrix(&mut rng, 7, 4));
        let full = ldde_vector(&p, &g).unwrap();
        // node 3 and 4 made degenerate; they are not queried below
        p.row_mut(3).copy_from_slice(&[0.25; 4]);
        let pairs = [g.edges()[4], g.edges()[1]];
        let sub = ldde_on_pairs(&p, &x, &pairs).unwrap();
        assert!((sub[0] - full.values()[4]).abs() < 1e-15);
        assert!((sub[1] - full.values()[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_feature_row_is_named() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        let g = Graph::new("z", x, [(0, 1)], None).unwrap();
        let p = Matrix::from_rows(&[[0.6, 0.4], [0.3, 0.7]]);
        match ldde_vector(&p, &g) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("node 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn signal_convention() {
        let v = LddeVector(vec![-0.3, 0.2, 0.0]);
        assert_eq!(signal(&v, &[0, 1]).unwrap(), vec![false, true]);
        assert_eq!(signal(&v, &[2]).unwrap(), vec![true]);
        let neg = LddeVector(vec![0.3, -0.2]);
        assert_eq!(signal(&neg, &[0, 1]).unwrap(), vec![true, false]);
        assert!(signal(&v, &[3]).is_err());
    }

    #[test]
    fn tape_ldde_matches_plain_and_has_valid_gradients() {
        let mut rng = seeded(8);
        let x = gaussian_matrix(&mut rng, 6, 3);
        let g = Graph::new("g", x.clone(), [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)], None).unwrap();
        let z = gaussian_matrix(&mut rng, 6, 4);
        let plain = ldde_vector(&row_softmax(&z), &g).unwrap();
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let p = tape.row_softmax(zv);
        let xv = tape.constant(x.clone());
        let out = record_ldde(&mut tape, p, xv, g.shared_edges()).unwrap();
        for (a, b) in tape.value(out).as_slice().iter().zip(plain.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let weights = Matrix::column(&[0.3, -1.0, 0.7, 2.0, -0.5, 1.1, 0.4]);
        let edges = g.shared_edges();
        let err = grad_check(
            |tape, vars| {
                let p = tape.row_softmax(vars[0]);
                let v = record_ldde(tape, p, vars[1], Arc::clone(&edges))?;
                let wt = tape.constant(weights.transpose());
                tape.matmul(wt, v)
            },
            &[z, x],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
