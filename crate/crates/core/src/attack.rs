//! Model-modification attacks an adversary may run on a stolen copy.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_setting3, synth_trigger_setting2, DataFreeConfig, EmbedConfig, EmbedOutcome, TriggerSynthConfig};
use crate::error::{Error, Result};
use crate::gnn::{fit, GnnModel, LayerSpec};
use crate::graph::{induced_subgraph, Graph};
use crate::optim::AdamConfig;
use crate::rarity::{select_key_setting2, RarityConfig};
use crate::rng::{derive_seed, seeded};
use crate::verify::PredictionProvider;
use crate::watermark::{gen_watermark, WatermarkKey, WatermarkString};

/// L1 norm of every output unit of layer `l`: its column in each weight
/// matrix plus its bias.
pub fn unit_norms(m: &GnnModel, l: usize) -> Vec<f64> {
    let layer = &m.layers[l];
    let mut norms: Vec<f64> = layer.bias.as_slice().iter().map(|b| b.abs()).collect();
    for w in std::iter::once(&layer.weight).chain(layer.neigh_weight.as_ref()) {
        for row in w.iter_rows() {
            for (n, v) in norms.iter_mut().zip(row) {
                *n += v.abs();
            }
        }
    }
    norms
}

/// Zeroes the `floor(ratio * units)` output units with the smallest L1 norm
/// in every hidden layer (ties by unit index). The output layer is left
/// alone unless `include_output`.
pub fn prune_l1(m: &GnnModel, ratio: f64, include_output: bool) -> Result<GnnModel> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("pruning ratio must lie in [0, 1), got {ratio}")));
    }
    let mut out = m.clone();
    let last = out.layers.len() - 1;
    for l in 0..out.layers.len() {
        if l == last && !include_output {
            continue;
        }
        let norms = unit_norms(&out, l);
        let count = (ratio * norms.len() as f64).floor() as usize;
        let mut order: Vec<usize> = (0..norms.len()).collect();
        order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
        let layer = &mut out.layers[l];
        for &unit in &order[..count] {
            layer.bias.as_mut_slice()[unit] = 0.0;
            for w in std::iter::once(&mut layer.weight).chain(layer.neigh_weight.as_mut()) {
                let cols = w.cols();
                for r in 0..w.rows() {
                    w.as_mut_slice()[r * cols + unit] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// Continues cross-entropy training on `g_val`.
pub fn finetune_attack(m: &GnnModel, g_val: &Graph, epochs: usize, adam: AdamConfig) -> Result<GnnModel> {
    let labels = Arc::new(g_val.require_labels()?.to_vec());
    m.check_input(g_val)?;
    let mut out = m.clone();
    let ops = out.operators(g_val);
    fit(
        &mut out,
        epochs,
        adam,
        |tape, bound| {
            let x = tape.constant(g_val.features().clone());
            let logits = bound.forward(tape, x, &ops)?;
            tape.cross_entropy(logits, Arc::clone(&labels))
        },
        |_, _| Ok(false),
    )?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverwriteConfig {
    pub n_w: usize,
    pub synth: TriggerSynthConfig,
    pub rarity: RarityConfig,
    pub embed: EmbedConfig,
    pub data_free: DataFreeConfig,
    pub seed: u64,
}

impl Default for OverwriteConfig {
    fn default() -> Self {
        Self {
            n_w: 64,
            synth: TriggerSynthConfig::default(),
            rarity: RarityConfig::default(),
            embed: EmbedConfig::default(),
            data_free: DataFreeConfig::default(),
            seed: 1,
        }
    }
}

/// What the adversary produced while overwriting.
#[derive(Clone, Debug)]
pub struct OverwriteOutcome {
    pub trigger: Graph,
    pub key: WatermarkKey,
    pub watermark: WatermarkString,
    pub embedding: EmbedOutcome,
}

/// The adversary runs the data-free embedding with its own trigger graph,
/// key and string on top of the watermarked model.
pub fn overwrite_attack(m_w: &GnnModel, topology: &Graph, cfg: &OverwriteConfig) -> Result<OverwriteOutcome> {
    let seed = |stream| derive_seed(cfg.seed, stream);
    let trigger = synth_trigger_setting2(m_w, topology, &TriggerSynthConfig { seed: seed(1), ..cfg.synth })?;
    let key = select_key_setting2(&trigger, m_w, cfg.n_w, &RarityConfig { seed: seed(2), ..cfg.rarity })?;
    let watermark = gen_watermark(cfg.n_w, seed(3))?;
    let embedding = embed_setting3(
        m_w,
        &trigger,
        &key,
        &watermark,
        &EmbedConfig { seed: seed(4), ..cfg.embed },
        &DataFreeConfig { seed: seed(5), ..cfg.data_free },
    )?;
    Ok(OverwriteOutcome { trigger, key, watermark, embedding })
}

/// Unlabeled subgraph on a random `fraction` of the nodes of `g`.
pub fn public_query_graph(g: &Graph, fraction: f64, seed: u64) -> Result<Graph> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("query fraction must lie in (0, 1], got {fraction}")));
    }
    let mut nodes: Vec<usize> = (0..g.num_nodes()).collect();
    nodes.shuffle(&mut seeded(seed));
    nodes.truncate(((fraction * g.num_nodes() as f64).round() as usize).max(1));
    nodes.sort_unstable();
    Ok(induced_subgraph(g, &nodes, format!("{}-public", g.name()))?.without_labels())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub query_fraction: f64,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { epochs: 1500, learning_rate: 1e-4, weight_decay: 1e-4, query_fraction: 0.8, seed: 0 }
    }
}

/// Queries `provider` once on `g_public` and distils a fresh surrogate by
/// minimizing `KL(teacher || surrogate)` over all queried nodes.
pub fn extract_surrogate(
    provider: &dyn PredictionProvider,
    g_public: &Graph,
    arch: &[LayerSpec],
    cfg: &ExtractConfig,
) -> Result<GnnModel> {
    let teacher = provider.predict(g_public)?;
    crate::verify::validate_probabilities(&teacher, g_public.num_nodes())?;
    let mut surrogate = GnnModel::new(arch, cfg.seed)?;
    surrogate.name = format!("surrogate-{}", cfg.seed);
    surrogate.check_input(g_public)?;
    if teacher.cols() != surrogate.num_classes() {
        return Err(Error::Dimension(format!(
            "teacher returns {} classes, surrogate has {}",
            teacher.cols(),
            surrogate.num_classes()
        )));
    }
    let ops = surrogate.operators(g_public);
    // KL differs from the soft cross-entropy by the teacher's entropy, a constant
    fit(
        &mut surrogate,
        cfg.epochs,
        AdamConfig::new(cfg.learning_rate, cfg.weight_decay),
        |tape, bound| {
            let x = tape.constant(g_public.features().clone());
            let logits = bound.forward(tape, x, &ops)?;
            let target = tape.constant(teacher.clone());
            tape.soft_cross_entropy(logits, target)
        },
        |_, _| Ok(false),
    )?;
    Ok(surrogate)
}

/// Mean `KL(p || q)` over rows.
pub fn mean_kl(p: &crate::tensor::Matrix, q: &crate::tensor::Matrix) -> Result<f64> {
    if p.shape() != q.shape() || p.rows() == 0 {
        return Err(Error::Dimension(format!("KL between {:?} and {:?}", p.shape(), q.shape())));
    }
    let total: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(crate::ldde::PROB_FLOOR)).ln())
        .sum();
    Ok(total / p.rows() as f64)
}
