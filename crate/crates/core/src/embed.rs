//! Watermark embedding by fine-tuning against a sign objective on key edges.
//!
//! Three deployments share one loop:
//!
//! * the training graph is the trigger graph ([`embed_setting1`]);
//! * a synthetic trigger graph with features optimized so that LDDE values sit
//!   near zero ([`synth_trigger_setting2`], [`embed_setting2`]);
//! * no training data at all, where a pseudo graph with ascending features
//!   stands in for it and the original model acts as teacher
//!   ([`embed_setting3`]).
//!
//! Each epoch first reads the key bits off the current model; embedding stops
//! as soon as they equal the watermark.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_logit, Tape, Var};
use crate::error::{Error, Result};
use crate::gnn::{BoundModel, GnnModel, GraphOperators};
use crate::graph::{generate_ba, Graph};
use crate::ldde::{record_ldde, signal_bit};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive_seed, gaussian_matrix, seeded};
use crate::verify::hms;
use crate::watermark::{WatermarkKey, WatermarkString};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Sharpness of the sigmoid applied to LDDE values inside the BCE.
    pub gamma: f64,
    pub stop_on_exact: bool,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-5, weight_decay: 1e-4, max_epochs: 2000, gamma: 10.0, stop_on_exact: true, seed: 0 }
    }
}

impl EmbedConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("embedding learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerSynthConfig {
    /// Weight of the feature-similarity penalty.
    pub lambda1: f64,
    pub feature_lr: f64,
    pub synth_epochs: usize,
    pub seed: u64,
}

impl Default for TriggerSynthConfig {
    fn default() -> Self {
        Self { lambda1: 1e-4, feature_lr: 0.01, synth_epochs: 300, seed: 0 }
    }
}

/// Pseudo graph and teacher settings for data-free embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataFreeConfig {
    pub num_nodes: usize,
    pub attach_m: usize,
    pub feature_lr: f64,
    /// Distil against the teacher's probabilities instead of its argmax.
    pub soft_targets: bool,
    pub seed: u64,
}

impl Default for DataFreeConfig {
    fn default() -> Self {
        Self { num_nodes: 500, attach_m: 2, feature_lr: 1e-3, soft_targets: false, seed: 0 }
    }
}

/// Cap on `|cos|` inside the similarity penalty so `1 / (1 - |cos|)` stays finite.
const COS_CAP: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Primary-task term (cross-entropy against labels or teacher).
    pub ce: f64,
    pub bce: f64,
    /// Key bits of the model at the start of this epoch against the watermark.
    pub hms: f64,
}

/// Result of an embedding run. Failure to extract the watermark within the
/// epoch budget is reported here, not as an error.
#[derive(Clone, Debug)]
pub struct EmbedOutcome {
    pub model: GnnModel,
    pub success: bool,
    /// Optimizer steps taken.
    pub epochs_used: usize,
    pub pre_hms: f64,
    pub final_hms: f64,
    pub best_hms: f64,
    pub log: Vec<EpochLog>,
    /// Pseudo graph after feature ascent (data-free embedding only).
    pub pseudo_graph: Option<Graph>,
}

impl EmbedOutcome {
    pub fn summary(&self) -> String {
        format!(
            "{}: {} epochs, hms {:.4} -> {:.4} (best {:.4})",
            if self.success { "embedded" } else { "FAILED" },
            self.epochs_used,
            self.pre_hms,
            self.final_hms,
            self.best_hms
        )
    }

    /// Per-epoch loss curve as CSV.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,ce,bce,hms\n");
        for l in &self.log {
            let _ = writeln!(s, "{},{},{},{}", l.epoch, l.ce, l.bce, l.hms);
        }
        s
    }
}

/// Mean `BCE(sigmoid(gamma * v_i), w_i)` over key values `v`.
pub fn watermark_bce(v: &[f64], w: &WatermarkString, gamma: f64) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::Length(format!("{} LDDE values for {} watermark bits", v.len(), w.len())));
    }
    Ok(v.iter().zip(w.targets()).map(|(&x, t)| bce_logit(gamma * x, t)).sum::<f64>() / v.len() as f64)
}

/// Taped version of [`watermark_bce`] on an `n_w x 1` LDDE column.
pub fn record_watermark_bce(tape: &mut Tape, v: Var, targets: Arc<Vec<f64>>, gamma: f64) -> Result<Var> {
    let scaled = tape.scale(v, gamma);
    tape.bce_with_logits(scaled, targets)
}

/// Key edges re-indexed onto the rows they touch, so only those rows are
/// pushed through the softmax and standardization.
#[derive(Clone, Debug)]
pub(crate) struct KeyRows {
    rows: Arc<Vec<usize>>,
    local_pairs: Arc<Vec<(usize, usize)>>,
}

impl KeyRows {
    pub(crate) fn new(key: &WatermarkKey, t: &Graph) -> Result<Self> {
        let pairs = key.pairs(t)?;
        let mut rows: Vec<usize> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
        rows.sort_unstable();
        rows.dedup();
        let local = |i: usize| rows.binary_search(&i).expect("row collected above");
        let local_pairs = pairs.iter().map(|&(u, v)| (local(u), local(v))).collect();
        Ok(Self { rows: Arc::new(rows), local_pairs: Arc::new(local_pairs) })
    }

    /// LDDE of the key edges from full-graph logits and features.
    pub(crate) fn record(&self, tape: &mut Tape, logits: Var, x: Var) -> Result<Var> {
        let z = tape.gather_rows(logits, Arc::clone(&self.rows))?;
        let xk = tape.gather_rows(x, Arc::clone(&self.rows))?;
        let p = tape.row_softmax(z);
        record_ldde(tape, p, xk, Arc::clone(&self.local_pairs))
    }
}

/// Shared pieces of an embedding job on one trigger graph: the key edges,
/// the target bits and the BCE sharpness.
pub struct WatermarkObjective<'a> {
    pub(crate) t: &'a Graph,
    pub(crate) ops: GraphOperators,
    pub(crate) key_rows: KeyRows,
    pub(crate) targets: Arc<Vec<f64>>,
    pub(crate) bits: Vec<bool>,
    pub(crate) gamma: f64,
}

impl<'a> WatermarkObjective<'a> {
    pub fn new(model: &GnnModel, t: &'a Graph, key: &WatermarkKey, w: &WatermarkString, gamma: f64) -> Result<Self> {
        key.check_watermark(w)?;
        model.check_input(t)?;
        Ok(Self {
            t,
            ops: model.operators(t),
            key_rows: KeyRows::new(key, t)?,
            targets: Arc::new(w.targets()),
            bits: w.bits.clone(),
            gamma,
        })
    }

    /// Records the trigger forward pass (unless `logits` already covers the
    /// trigger graph) and returns the key LDDE column.
    pub(crate) fn key_ldde(&self, tape: &mut Tape, bound: &BoundModel, logits: Option<Var>) -> Result<Var> {
        let x = tape.constant(self.t.features().clone());
        let logits = match logits {
            Some(l) => l,
            None => bound.forward(tape, x, &self.ops)?,
        };
        self.key_rows.record(tape, logits, x)
    }

    /// Watermark BCE of `bound` on the key edges.
    pub fn record_bce(&self, tape: &mut Tape, bound: &BoundModel) -> Result<Var> {
        let v = self.key_ldde(tape, bound, None)?;
        record_watermark_bce(tape, v, Arc::clone(&self.targets), self.gamma)
    }

    pub(crate) fn hms_of(&self, v: &[f64]) -> Result<f64> {
        let bits: Vec<bool> = v.iter().copied().map(signal_bit).collect();
        hms(&bits, &self.bits)
    }

    /// Key HMS of an untaped model.
    pub fn model_hms(&self, model: &GnnModel) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let v = self.key_ldde(&mut tape, &bound, None)?;
        self.hms_of(tape.value(v).as_slice())
    }
}

/// Per-epoch primary term: records the primary loss and, when the trigger
/// graph is the same graph, hands back its logits for reuse.
type PrimaryFn<'f> = dyn FnMut(&mut Tape, &BoundModel) -> Result<(Var, Option<Var>)> + 'f;
type AfterStepFn<'f> = dyn FnMut(&GnnModel) -> Result<()> + 'f;

fn run_embedding(
    m_o: &GnnModel,
    objective: &WatermarkObjective<'_>,
    cfg: &EmbedConfig,
    primary: &mut PrimaryFn<'_>,
    after_step: &mut AfterStepFn<'_>,
) -> Result<EmbedOutcome> {
    cfg.validate()?;
    let mut model = m_o.clone();
    let mut opt = AdamState::new(AdamConfig::new(cfg.learning_rate, cfg.weight_decay));
    let mut log = Vec::new();
    let mut best_hms = 0.0f64;
    let mut pre_hms = f64::NAN;
    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let (ce, shared_logits) = primary(&mut tape, &bound)?;
        let v = objective.key_ldde(&mut tape, &bound, shared_logits)?;
        let current = objective.hms_of(tape.value(v).as_slice())?;
        if epoch == 0 {
            pre_hms = current;
        }
        best_hms = best_hms.max(current);
        if cfg.stop_on_exact && current == 1.0 {
            return Ok(EmbedOutcome {
                model,
                success: true,
                epochs_used: epoch,
                pre_hms,
                final_hms: current,
                best_hms,
                log,
                pseudo_graph: None,
            });
        }
        let bce = record_watermark_bce(&mut tape, v, Arc::clone(&objective.targets), objective.gamma)?;
        let loss = tape.add(ce, bce)?;
        let (ce_value, bce_value) = (tape.value(ce).item(), tape.value(bce).item());
        if !(ce_value.is_finite() && bce_value.is_finite()) {
            return Err(Error::Numeric(format!("embedding loss became ce {ce_value}, bce {bce_value} at epoch {epoch}")));
        }
        log.push(EpochLog { epoch, ce: ce_value, bce: bce_value, hms: current });
        let mut grads = tape.backward(loss)?;
        let g: Vec<_> = bound.vars().iter().map(|&v| grads.take(v)).collect();
        opt.step(&mut model.params_mut(), &g)?;
        if !model.is_finite() {
            return Err(Error::Numeric(format!("non-finite parameter after embedding epoch {epoch}")));
        }
        after_step(&model)?;
    }
    let final_hms = objective.model_hms(&model)?;
    if cfg.max_epochs == 0 {
        pre_hms = final_hms;
    }
    best_hms = best_hms.max(final_hms);
    Ok(EmbedOutcome {
        model,
        success: final_hms == 1.0,
        epochs_used: cfg.max_epochs,
        pre_hms,
        final_hms,
        best_hms,
        log,
        pseudo_graph: None,
    })
}

/// Fine-tunes `m_o` on `CE(train labels) + BCE(key bits)`. The trigger graph
/// is normally `g_train` itself, in which case one forward pass serves both
/// terms.
pub fn embed_setting1(
    m_o: &GnnModel,
    g_train: &Graph,
    t: &Graph,
    key: &WatermarkKey,
    w: &WatermarkString,
    cfg: &EmbedConfig,
) -> Result<EmbedOutcome> {
    let labels = Arc::new(g_train.require_labels()?.to_vec());
    m_o.check_input(g_train)?;
    let objective = WatermarkObjective::new(m_o, t, key, w, cfg.gamma)?;
    let same = g_train == t;
    let train_ops = if same { objective.ops.clone() } else { m_o.operators(g_train) };
    let mut primary = |tape: &mut Tape, bound: &BoundModel| -> Result<(Var, Option<Var>)> {
        let x = tape.constant(g_train.features().clone());
        let logits = bound.forward(tape, x, &train_ops)?;
        let ce = tape.cross_entropy(logits, Arc::clone(&labels))?;
        Ok((ce, same.then_some(logits)))
    };
    run_embedding(m_o, &objective, cfg, &mut primary, &mut |_| Ok(()))
}

/// Same objective as [`embed_setting1`] with a synthesized trigger graph.
pub fn embed_setting2(
    m_o: &GnnModel,
    g_train: &Graph,
    t_synth: &Graph,
    key: &WatermarkKey,
    w: &WatermarkString,
    cfg: &EmbedConfig,
) -> Result<EmbedOutcome> {
    embed_setting1(m_o, g_train, t_synth, key, w, cfg)
}

/// Records `mean |LDDE| + lambda1 * mean 1 / (1 - |cos(x_u, x_v)|)` over all
/// edges of `t` with node features `x`.
pub fn record_synth_loss(
    tape: &mut Tape,
    bound: &BoundModel,
    x: Var,
    t: &Graph,
    ops: &GraphOperators,
    lambda1: f64,
) -> Result<Var> {
    let edges = t.shared_edges();
    let logits = bound.forward(tape, x, ops)?;
    let p = tape.row_softmax(logits);
    let v = record_ldde(tape, p, x, Arc::clone(&edges))?;
    let abs_v = tape.abs(v);
    let ldde_term = tape.mean(abs_v);
    let cos = tape.pair_cosine(x, edges)?;
    let abs_cos = tape.abs(cos);
    let capped = tape.clamp(abs_cos, 0.0, COS_CAP);
    let gap = tape.affine(capped, -1.0, 1.0);
    let inv = tape.recip(gap)?;
    let penalty = tape.mean(inv);
    let penalty = tape.scale(penalty, lambda1);
    tape.add(ldde_term, penalty)
}

/// Optimizes Gaussian-initialized node features on a fixed topology so that
/// `m_o`'s LDDE values shrink toward zero without features collapsing onto
/// each other. Topology and name of `topology` are kept.
pub fn synth_trigger_setting2(m_o: &GnnModel, topology: &Graph, cfg: &TriggerSynthConfig) -> Result<Graph> {
    if !(cfg.lambda1 >= 0.0 && cfg.lambda1.is_finite()) {
        return Err(Error::Config(format!("lambda1 must be non-negative, got {}", cfg.lambda1)));
    }
    if !(cfg.feature_lr > 0.0) {
        return Err(Error::Config(format!("feature learning rate must be positive, got {}", cfg.feature_lr)));
    }
    if topology.num_edges() == 0 {
        return Err(Error::Graph(format!("trigger topology `{}` has no edges", topology.name())));
    }
    let mut x = gaussian_matrix(&mut seeded(derive_seed(cfg.seed, 7)), topology.num_nodes(), m_o.in_dim());
    let ops = m_o.operators(topology);
    let mut opt = AdamState::new(AdamConfig::new(cfg.feature_lr, 0.0));
    for epoch in 0..cfg.synth_epochs {
        let mut tape = Tape::new();
        let bound = m_o.bind(&mut tape, false);
        let xv = tape.param(x.clone());
        let loss = record_synth_loss(&mut tape, &bound, xv, topology, &ops, cfg.lambda1)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("trigger synthesis loss became {value} at epoch {epoch}")));
        }
        let g = tape.backward(loss)?.wrt(xv);
        opt.step(&mut [&mut x], &[g])?;
    }
    topology.with_features(x)
}

/// Records the distillation term `CE(M_w(G~), teacher)`, with the teacher
/// either hard argmax labels or soft probabilities of `m_o`.
pub fn record_distill(
    tape: &mut Tape,
    student: &BoundModel,
    teacher: &BoundModel,
    x: Var,
    ops: &GraphOperators,
    soft: bool,
) -> Result<Var> {
    let z_s = student.forward(tape, x, ops)?;
    let z_t = teacher.forward(tape, x, ops)?;
    if soft {
        let p_t = tape.row_softmax(z_t);
        tape.soft_cross_entropy(z_s, p_t)
    } else {
        let labels = Arc::new(tape.value(z_t).argmax_rows());
        tape.cross_entropy(z_s, labels)
    }
}

/// Data-free embedding. A BA pseudo graph with Gaussian features replaces
/// the training graph; each epoch takes one model step on
/// `CE(M_w(G~), M_o(G~)) + BCE(key bits)` and one ascent step on the pseudo
/// features that pushes the student away from the teacher.
pub fn embed_setting3(
    m_o: &GnnModel,
    t: &Graph,
    key: &WatermarkKey,
    w: &WatermarkString,
    cfg: &EmbedConfig,
    df: &DataFreeConfig,
) -> Result<EmbedOutcome> {
    if !(df.feature_lr > 0.0) {
        return Err(Error::Config(format!("pseudo feature learning rate must be positive, got {}", df.feature_lr)));
    }
    let pseudo = generate_ba(df.num_nodes, df.attach_m, m_o.in_dim(), df.seed)?;
    let pseudo_ops = m_o.operators(&pseudo);
    let objective = WatermarkObjective::new(m_o, t, key, w, cfg.gamma)?;
    let x = std::cell::RefCell::new(pseudo.features().clone());
    let mut feature_opt = AdamState::new(AdamConfig::new(df.feature_lr, 0.0));

    let mut primary = |tape: &mut Tape, bound: &BoundModel| -> Result<(Var, Option<Var>)> {
        let teacher = m_o.bind(tape, false);
        let xv = tape.constant(x.borrow().clone());
        Ok((record_distill(tape, bound, &teacher, xv, &pseudo_ops, df.soft_targets)?, None))
    };
    let mut ascend = |student: &GnnModel| -> Result<()> {
        let mut tape = Tape::new();
        let s = student.bind(&mut tape, false);
        let teacher = m_o.bind(&mut tape, false);
        let xv = tape.param(x.borrow().clone());
        let gap = record_distill(&mut tape, &s, &teacher, xv, &pseudo_ops, df.soft_targets)?;
        // ascent: minimize the negated discrepancy
        let neg = tape.scale(gap, -1.0);
        let g = tape.backward(neg)?.wrt(xv);
        feature_opt.step(&mut [&mut *x.borrow_mut()], &[g])
    };
    let mut outcome = run_embedding(m_o, &objective, cfg, &mut primary, &mut ascend)?;
    outcome.pseudo_graph = Some(pseudo.with_features(x.into_inner())?);
    Ok(outcome)
}
