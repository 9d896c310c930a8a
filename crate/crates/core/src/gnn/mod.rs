//! Inductive message-passing node classifiers.
//!
//! Two layer families are provided:
//!
//! * [`LayerKind::MeanAggregate`]: `h'_v = act(W_self h_v + W_neigh mean_{u in N(v)} h_u + b)`,
//!   with an empty neighbourhood contributing the zero vector.
//! * [`LayerKind::NormalizedConv`]: `H' = act(D^-1/2 (A + I) D^-1/2 H W + b)`.
//!
//! Weights are stored `in_dim x out_dim` so column `j` of every weight matrix
//! plus `bias[j]` make up output unit `j`.

mod checkpoint;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, save_model, ModelFile};
pub use train::{fit, test_accuracy, test_cross_entropy, train_primary, FitOutcome, TrainConfig};

/// Shape of a default model: layer family, hidden width and depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub hidden: usize,
    pub num_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: LayerKind::MeanAggregate, hidden: 64, num_layers: 4 }
    }
}

impl ModelConfig {
    pub fn architecture(&self, in_dim: usize, num_classes: usize) -> Vec<LayerSpec> {
        architecture(self.kind, in_dim, self.hidden, num_classes, self.num_layers)
    }
}

use crate::autodiff::{SparseOp, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{derive_seed, seeded, uniform_matrix};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    MeanAggregate,
    NormalizedConv,
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-aggregate" | "sage" => Ok(Self::MeanAggregate),
            "normalized-conv" | "gcn" => Ok(Self::NormalizedConv),
            _ => Err(Error::Usage(format!("unknown layer kind `{s}` (mean-aggregate | normalized-conv)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Elu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// `num_layers` layers of one kind: ELU on every hidden layer, a linear
/// output layer with `num_classes` units.
pub fn architecture(kind: LayerKind, in_dim: usize, hidden: usize, num_classes: usize, num_layers: usize) -> Vec<LayerSpec> {
    (0..num_layers)
        .map(|i| {
            let last = i + 1 == num_layers;
            LayerSpec {
                kind,
                in_dim: if i == 0 { in_dim } else { hidden },
                out_dim: if last { num_classes } else { hidden },
                activation: if last { Activation::None } else { Activation::Elu },
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Matrix,
    /// Neighbour weight of a mean-aggregate layer.
    pub neigh_weight: Option<Matrix>,
    pub bias: Matrix,
}

impl Layer {
    fn init(spec: LayerSpec, seed: u64) -> Self {
        let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
        let mut rng = seeded(seed);
        let weight = uniform_matrix(&mut rng, spec.in_dim, spec.out_dim, bound);
        let neigh_weight = match spec.kind {
            LayerKind::MeanAggregate => Some(uniform_matrix(&mut rng, spec.in_dim, spec.out_dim, bound)),
            LayerKind::NormalizedConv => None,
        };
        Self { spec, weight, neigh_weight, bias: Matrix::zeros(1, spec.out_dim) }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.weight];
        out.extend(self.neigh_weight.as_ref());
        out.push(&self.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.weight];
        out.extend(self.neigh_weight.as_mut());
        out.push(&mut self.bias);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub name: String,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

/// Output of an untaped forward pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub logits: Matrix,
    pub probs: Matrix,
}

impl GnnModel {
    /// Glorot-uniform weights, zero biases, all drawn from `seed`.
    pub fn new(arch: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_architecture(arch)?;
        let layers = arch
            .iter()
            .enumerate()
            .map(|(i, &spec)| Layer::init(spec, derive_seed(seed, i as u64)))
            .collect();
        Ok(Self { name: format!("model-{seed}"), seed, layers })
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_dim)
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Records the parameters on `tape`, either as differentiable leaves or
    /// as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let vars = self
            .params()
            .into_iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        BoundModel { specs: self.architecture(), vars }
    }

    pub fn operators(&self, g: &Graph) -> GraphOperators {
        GraphOperators::for_kinds(g, self.layers.iter().map(|l| l.spec.kind))
    }

    /// Untaped inference: logits and softmax probabilities per node.
    pub fn forward(&self, g: &Graph) -> Result<Prediction> {
        self.check_input(g)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(g.features().clone());
        let logits = bound.forward(&mut tape, x, &self.operators(g))?;
        let logits = tape.value(logits).clone();
        let probs = crate::autodiff::row_softmax(&logits);
        Ok(Prediction { logits, probs })
    }

    pub fn predict_proba(&self, g: &Graph) -> Result<Matrix> {
        Ok(self.forward(g)?.probs)
    }

    pub fn check_input(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "graph `{}` has feature dim {}, model expects {}",
                g.name(),
                g.feature_dim(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Copies parameters from a gradient-ordered list.
    pub fn set_params(&mut self, values: Vec<Matrix>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::Dimension(format!("{} values for {} parameters", values.len(), slots.len())));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Dimension(format!("parameter {:?} vs {:?}", slot.shape(), v.shape())));
            }
            **slot = v;
        }
        Ok(())
    }
}

pub(crate) fn validate_architecture(arch: &[LayerSpec]) -> Result<()> {
    let Some(last) = arch.last() else {
        return Err(Error::Config("architecture has no layers".into()));
    };
    if last.activation != Activation::None {
        return Err(Error::Config("the output layer must not have an activation".into()));
    }
    for (i, l) in arch.iter().enumerate() {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in arch.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::Config(format!(
                "layer {i} outputs {} features but layer {} expects {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Model parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    specs: Vec<LayerSpec>,
    vars: Vec<Var>,
}

impl BoundModel {
    /// Binds an architecture to parameter vars already on a tape, in
    /// [`GnnModel::params`] order.
    pub fn from_vars(specs: Vec<LayerSpec>, vars: Vec<Var>) -> Self {
        Self { specs, vars }
    }

    /// Parameter vars in [`GnnModel::params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Records a forward pass from node features `x` to logits.
    pub fn forward(&self, tape: &mut Tape, x: Var, ops: &GraphOperators) -> Result<Var> {
        let mut h = x;
        let mut next = self.vars.iter().copied();
        for spec in &self.specs {
            let w = next.next().expect("bound vars match layers");
            let pre = match spec.kind {
                LayerKind::MeanAggregate => {
                    let wn = next.next().expect("bound vars match layers");
                    let agg = tape.sparse(ops.get(LayerKind::MeanAggregate)?, h)?;
                    let own = tape.matmul(h, w)?;
                    let neigh = tape.matmul(agg, wn)?;
                    tape.add(own, neigh)?
                }
                LayerKind::NormalizedConv => {
                    let hw = tape.matmul(h, w)?;
                    tape.sparse(ops.get(LayerKind::NormalizedConv)?, hw)?
                }
            };
            let b = next.next().expect("bound vars match layers");
            let pre = tape.add_row(pre, b)?;
            h = match spec.activation {
                Activation::Elu => tape.elu(pre),
                Activation::None => pre,
            };
        }
        Ok(h)
    }
}

/// Fixed propagation operators of one graph.
#[derive(Clone, Debug, Default)]
pub struct GraphOperators {
    mean: Option<Arc<SparseOp>>,
    normalized: Option<Arc<SparseOp>>,
}

impl GraphOperators {
    pub fn for_kinds(g: &Graph, kinds: impl IntoIterator<Item = LayerKind>) -> Self {
        let mut ops = Self::default();
        let adj = g.adjacency();
        for kind in kinds {
            match kind {
                LayerKind::MeanAggregate if ops.mean.is_none() => {
                    ops.mean = Some(Arc::new(mean_operator(&adj)));
                }
                LayerKind::NormalizedConv if ops.normalized.is_none() => {
                    ops.normalized = Some(Arc::new(normalized_operator(&adj)));
                }
                _ => {}
            }
        }
        ops
    }

    fn get(&self, kind: LayerKind) -> Result<Arc<SparseOp>> {
        let op = match kind {
            LayerKind::MeanAggregate => &self.mean,
            LayerKind::NormalizedConv => &self.normalized,
        };
        op.clone().ok_or_else(|| Error::Usage(format!("graph operators were built without {kind:?}")))
    }
}

fn mean_operator(adj: &[Vec<usize>]) -> SparseOp {
    let rows = adj
        .iter()
        .map(|nbrs| {
            let w = 1.0 / nbrs.len().max(1) as f64;
            nbrs.iter().map(|&u| (u, w)).collect()
        })
        .collect();
    SparseOp::from_rows(adj.len(), rows)
}

fn normalized_operator(adj: &[Vec<usize>]) -> SparseOp {
    let inv_sqrt: Vec<f64> = adj.iter().map(|nbrs| 1.0 / ((nbrs.len() + 1) as f64).sqrt()).collect();
    let rows = adj
        .iter()
        .enumerate()
        .map(|(v, nbrs)| {
            // self-loop slotted in sorted position
            let mut row: Vec<(usize, f64)> = nbrs.iter().map(|&u| (u, inv_sqrt[v] * inv_sqrt[u])).collect();
            let pos = row.partition_point(|&(u, _)| u < v);
            row.insert(pos, (v, inv_sqrt[v] * inv_sqrt[v]));
            row
        })
        .collect();
    SparseOp::from_rows(adj.len(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::elu;

    fn six_node_graph() -> Graph {
        let x = Matrix::from_rows(&[
            [1.0, 0.0, 0.5],
            [0.2, -1.0, 0.3],
            [0.0, 0.4, -0.7],
            [1.5, 0.5, 0.0],
            [-0.3, 0.8, 1.1],
            [0.6, -0.2, 0.9],
        ]);
        Graph::new("six", x, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 4), (0, 5)], None).unwrap()
    }

    #[test]
    fn isolated_node_has_zero_neighbour_term() {
        let spec = LayerSpec { kind: LayerKind::MeanAggregate, in_dim: 2, out_dim: 2, activation: Activation::None };
        let mut m = GnnModel::new(&[spec], 0).unwrap();
        m.layers[0].weight = Matrix::zeros(2, 2);
        m.layers[0].neigh_weight = Some(Matrix::identity(2));
        let g = Graph::new("pair", Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), [(0, 1)], None).unwrap();
        let out = m.forward(&g).unwrap().logits;
        assert_eq!(out.row(0), &[3.0, 4.0]);
        assert_eq!(out.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn permutation_equivariance() {
        let g = six_node_graph();
        let perm = [3usize, 0, 5, 1, 4, 2]; // new node i is old node perm[i]
        let mut inv = [0usize; 6];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pg = Graph::new(
            "perm",
            g.features().select_rows(&perm),
            g.edges().iter().map(|&(u, v)| (inv[u], inv[v])),
            None,
        )
        .unwrap();
        for kind in [LayerKind::MeanAggregate, LayerKind::NormalizedConv] {
            let m = GnnModel::new(&architecture(kind, 3, 4, 2, 3), 5).unwrap();
            let a = m.forward(&g).unwrap().logits;
            let b = m.forward(&pg).unwrap().logits;
            for (new, &old) in perm.iter().enumerate() {
                for (x, y) in a.row(old).iter().zip(b.row(new)) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_node_identity_weights() {
        let arch = architecture(LayerKind::NormalizedConv, 2, 2, 2, 2);
        let mut m = GnnModel::new(&arch, 0).unwrap();
        for l in &mut m.layers {
            l.weight = Matrix::identity(2);
        }
        let g = Graph::new("one", Matrix::from_rows(&[[-1.0, 2.0]]), [], None).unwrap();
        // single node: normalized operator is 1 on the self-loop
        let out = m.forward(&g).unwrap().logits;
        assert!((out[(0, 0)] - elu(-1.0)).abs() < 1e-15);
        assert_eq!(out[(0, 1)], 2.0);
    }

    #[test]
    fn normalized_operator_matches_dense_formula() {
        let g = six_node_graph();
        let adj = g.adjacency();
        let op = normalized_operator(&adj);
        let n = g.num_nodes();
        let deg: Vec<f64> = adj.iter().map(|a| (a.len() + 1) as f64).collect();
        let dense = op.apply(&Matrix::identity(n)).unwrap();
        for i in 0..n {
            for j in 0..n {
                let a = if i == j || adj[i].contains(&j) { 1.0 } else { 0.0 };
                assert!((dense[(i, j)] - a / (deg[i] * deg[j]).sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn architecture_validation() {
        let mut arch = architecture(LayerKind::MeanAggregate, 4, 8, 3, 4);
        assert!(GnnModel::new(&arch, 0).is_ok());
        arch[3].activation = Activation::Elu;
        assert!(GnnModel::new(&arch, 0).is_err());
        let mut arch = architecture(LayerKind::MeanAggregate, 4, 8, 3, 4);
        arch[2].in_dim = 7;
        assert!(GnnModel::new(&arch, 0).is_err());
    }

    #[test]
    fn feature_dim_mismatch() {
        let m = GnnModel::new(&architecture(LayerKind::NormalizedConv, 4, 8, 3, 2), 0).unwrap();
        assert!(matches!(m.forward(&six_node_graph()), Err(Error::Dimension(_))));
    }
}
