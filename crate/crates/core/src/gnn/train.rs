use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BoundModel, GnnModel, LayerSpec};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::{AdamConfig, AdamState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and weight decay non-negative, got {} / {}",
                self.learning_rate, self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.weight_decay)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOutcome {
    pub epochs_run: usize,
    pub final_loss: f64,
    /// `stop` returned true before the epoch budget ran out.
    pub stopped_early: bool,
}

/// Full-batch Adam loop. `stop` is consulted at the start of every epoch with
/// the current model; `loss` records one scalar loss per epoch on a fresh
/// tape.
pub fn fit<L, S>(model: &mut GnnModel, epochs: usize, adam: AdamConfig, mut loss: L, mut stop: S) -> Result<FitOutcome>
where
    L: FnMut(&mut Tape, &BoundModel) -> Result<Var>,
    S: FnMut(&GnnModel, usize) -> Result<bool>,
{
    let mut opt = AdamState::new(adam);
    let mut final_loss = f64::NAN;
    for epoch in 0..epochs {
        if stop(model, epoch)? {
            return Ok(FitOutcome { epochs_run: epoch, final_loss, stopped_early: true });
        }
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let l = loss(&mut tape, &bound)?;
        final_loss = tape.value(l).item();
        if !final_loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {final_loss} at epoch {epoch}")));
        }
        let mut grads = tape.backward(l)?;
        let g: Vec<_> = bound.vars().iter().map(|&v| grads.take(v)).collect();
        opt.step(&mut model.params_mut(), &g)?;
        if !model.is_finite() {
            return Err(Error::Numeric(format!("non-finite parameter after epoch {epoch}")));
        }
    }
    Ok(FitOutcome { epochs_run: epochs, final_loss, stopped_early: false })
}

/// Trains a fresh model with cross-entropy on every labeled node of `train`.
pub fn train_primary(train: &Graph, arch: &[LayerSpec], cfg: &TrainConfig) -> Result<GnnModel> {
    let labels = Arc::new(train.require_labels()?.to_vec());
    cfg.validate()?;
    let mut model = GnnModel::new(arch, cfg.seed)?;
    model.check_input(train)?;
    if labels.iter().any(|&c| c >= model.num_classes()) {
        return Err(Error::Dimension(format!(
            "labels of `{}` exceed the model's {} output classes",
            train.name(),
            model.num_classes()
        )));
    }
    model.name = format!("{}-{}", train.name(), cfg.seed);
    let ops = model.operators(train);
    fit(
        &mut model,
        cfg.epochs,
        cfg.adam(),
        |tape, bound| {
            let x = tape.constant(train.features().clone());
            let logits = bound.forward(tape, x, &ops)?;
            tape.cross_entropy(logits, Arc::clone(&labels))
        },
        |_, _| Ok(false),
    )?;
    Ok(model)
}

/// Fraction of nodes whose argmax prediction equals the label.
pub fn test_accuracy(model: &GnnModel, g: &Graph) -> Result<f64> {
    let y = g.require_labels()?;
    if y.is_empty() {
        return Err(Error::Usage(format!("graph `{}` has no nodes to score", g.name())));
    }
    let pred = model.forward(g)?.logits.argmax_rows();
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}

/// Mean cross-entropy of the model on a labeled graph.
pub fn test_cross_entropy(model: &GnnModel, g: &Graph) -> Result<f64> {
    let y = g.require_labels()?;
    if y.is_empty() {
        return Err(Error::Usage(format!("graph `{}` has no nodes to score", g.name())));
    }
    let logits = model.forward(g)?.logits;
    if y.iter().any(|&c| c >= logits.cols()) {
        return Err(Error::Dimension(format!("label exceeds the model's {} classes", logits.cols())));
    }
    let total: f64 = logits
        .iter_rows()
        .zip(y)
        .map(|(row, &c)| crate::autodiff::logsumexp(row) - row[c])
        .sum();
    Ok(total / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{architecture, LayerKind};
    use crate::gradcheck::grad_check;
    use crate::graph::{generate_sbm, induced_split, SbmConfig, SplitSpec};
    use crate::tensor::Matrix;

    #[test]
    fn zero_epochs_returns_initialisation() {
        let g = generate_sbm(&SbmConfig { num_nodes: 60, feature_dim: 4, ..Default::default() }).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let arch = architecture(LayerKind::MeanAggregate, 4, 8, 5, 4);
        let m = train_primary(&g, &arch, &cfg).unwrap();
        let fresh = GnnModel::new(&arch, cfg.seed).unwrap();
        assert_eq!(m.layers, fresh.layers);
    }

    #[test]
    fn training_is_deterministic() {
        let g = generate_sbm(&SbmConfig { num_nodes: 80, feature_dim: 4, ..Default::default() }).unwrap();
        let cfg = TrainConfig { epochs: 5, ..Default::default() };
        let arch = architecture(LayerKind::NormalizedConv, 4, 8, 5, 4);
        assert_eq!(train_primary(&g, &arch, &cfg).unwrap(), train_primary(&g, &arch, &cfg).unwrap());
    }

    #[test]
    fn separable_sbm_is_learned() {
        let sbm = SbmConfig {
            num_nodes: 400,
            num_classes: 2,
            intra_p: 0.05,
            inter_p: 0.001,
            feature_dim: 8,
            feature_shift: 4.0,
            seed: 1,
        };
        let g = generate_sbm(&sbm).unwrap();
        let split = induced_split(&g, &SplitSpec { seed: 1, ..Default::default() }).unwrap();
        for kind in [LayerKind::MeanAggregate, LayerKind::NormalizedConv] {
            let cfg = TrainConfig { epochs: 200, learning_rate: 1e-2, ..Default::default() };
            let m = train_primary(&split.train, &architecture(kind, 8, 16, 2, 2), &cfg).unwrap();
            let acc = test_accuracy(&m, &split.test).unwrap();
            assert!(acc >= 0.95, "{kind:?}: {acc}");
        }
    }

    #[test]
    fn accuracy_needs_labels() {
        let g = generate_sbm(&SbmConfig { num_nodes: 20, feature_dim: 3, ..Default::default() }).unwrap();
        let arch = architecture(LayerKind::MeanAggregate, 3, 4, 5, 2);
        let m = train_primary(&g, &arch, &TrainConfig { epochs: 1, ..Default::default() }).unwrap();
        assert!(test_accuracy(&m, &g.without_labels()).is_err());
        let ce = test_cross_entropy(&m, &g).unwrap();
        assert!(ce.is_finite() && ce > 0.0);
    }

    #[test]
    fn constant_model_accuracy_is_one_over_classes() {
        let g = generate_sbm(&SbmConfig { num_nodes: 100, num_classes: 4, feature_dim: 3, ..Default::default() }).unwrap();
        let mut m = GnnModel::new(&architecture(LayerKind::NormalizedConv, 3, 4, 4, 2), 0).unwrap();
        for p in m.params_mut() {
            *p = Matrix::zeros(p.rows(), p.cols());
        }
        // all-zero logits: argmax picks class 0, a quarter of the balanced labels
        assert_eq!(test_accuracy(&m, &g).unwrap(), 0.25);
    }

    #[test]
    fn forward_gradients_match_finite_differences() {
        let g = generate_sbm(&SbmConfig { num_nodes: 10, num_classes: 2, intra_p: 0.5, inter_p: 0.1, feature_dim: 3, ..Default::default() })
            .unwrap();
        let labels = Arc::new(g.labels().unwrap().to_vec());
        for kind in [LayerKind::MeanAggregate, LayerKind::NormalizedConv] {
            let m = GnnModel::new(&architecture(kind, 3, 4, 2, 3), 7).unwrap();
            let ops = m.operators(&g);
            let params: Vec<Matrix> = m.params().into_iter().cloned().collect();
            let arch = m.architecture();
            let err = grad_check(
                |tape, vars| {
                    let bound = BoundModel::from_vars(arch.clone(), vars.to_vec());
                    let x = tape.constant(g.features().clone());
                    let logits = bound.forward(tape, x, &ops)?;
                    tape.cross_entropy(logits, Arc::clone(&labels))
                },
                &params,
                1e-6,
            )
            .unwrap();
            assert!(err <= 1e-4, "{kind:?}: {err}");
        }
    }
}
