//! Grid of attacks over a population of models, with CSV output and
//! markdown summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::attack::{extract_surrogate, finetune_attack, overwrite_attack, prune_l1, ExtractConfig, OverwriteConfig};
use crate::embed::watermark_bce;
use crate::error::{Error, Result};
use crate::gnn::{test_accuracy, test_cross_entropy, GnnModel};
use crate::graph::Graph;
use crate::ldde::ldde_on_pairs;
use crate::optim::AdamConfig;
use crate::verify::{verify, VerificationResult};
use crate::watermark::{WatermarkKey, WatermarkRegistry, WatermarkString};

pub const CSV_HEADER: [&str; 11] = [
    "model_id",
    "setting",
    "attack",
    "param",
    "tac_before",
    "tac_after",
    "hms_before",
    "hms_after",
    "ce_test",
    "bce_wm",
    "verified",
];

fn default_finetune_lr() -> f64 {
    5e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttackSpec {
    None,
    Prune {
        ratio: f64,
        #[serde(default)]
        include_output: bool,
    },
    Finetune {
        epochs: usize,
        #[serde(default = "default_finetune_lr")]
        learning_rate: f64,
    },
    Overwrite {
        #[serde(default)]
        config: OverwriteConfig,
    },
    Extract {
        #[serde(default)]
        config: ExtractConfig,
    },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Prune { .. } => "prune",
            AttackSpec::Finetune { .. } => "finetune",
            AttackSpec::Overwrite { .. } => "overwrite",
            AttackSpec::Extract { .. } => "extract",
        }
    }

    /// The swept parameter as it appears in the CSV.
    pub fn param(&self) -> String {
        match self {
            AttackSpec::None => String::new(),
            AttackSpec::Prune { ratio, .. } => ratio.to_string(),
            AttackSpec::Finetune { epochs, .. } => epochs.to_string(),
            AttackSpec::Overwrite { config } => config.n_w.to_string(),
            AttackSpec::Extract { config } => config.epochs.to_string(),
        }
    }
}

/// Everything needed to verify models of one setting.
#[derive(Clone, Debug)]
pub struct VerificationContext {
    pub setting: String,
    pub trigger: Graph,
    pub key: WatermarkKey,
    pub registry: WatermarkRegistry,
    pub tau: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub struct SweepModel {
    pub id: String,
    pub model: GnnModel,
    /// Registered distribution id; `None` for independent models.
    pub expected_id: Option<String>,
    /// Index into the sweep's contexts.
    pub context: usize,
}

/// Graphs the attacks and metrics run on.
#[derive(Clone, Debug)]
pub struct SweepData {
    pub test: Graph,
    /// Fine-tuning data.
    pub val: Graph,
    /// Unlabeled query graph for extraction.
    pub public: Option<Graph>,
    /// Topology the overwriting adversary synthesizes its trigger on.
    pub adversary_topology: Option<Graph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model_id: String,
    pub setting: String,
    pub attack: String,
    pub param: String,
    pub tac_before: Option<f64>,
    pub tac_after: Option<f64>,
    pub hms_before: Option<f64>,
    pub hms_after: Option<f64>,
    pub ce_test: Option<f64>,
    pub bce_wm: Option<f64>,
    /// `true`, `false`, or `error` when the row failed.
    pub verified: String,
    #[serde(skip)]
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.verified == "error"
    }
}

struct Snapshot {
    tac: f64,
    ce: f64,
    hms: f64,
    bce: f64,
    verified: bool,
}

/// HMS against the model's own string, or the best registry score for an
/// independent model.
fn reference_hms(result: &VerificationResult, expected: Option<&str>) -> (f64, String) {
    let own = expected.and_then(|id| result.scores.iter().find(|(s, _)| s == id));
    let best = || result.scores.iter().fold(&result.scores[0], |b, s| if s.1 > b.1 { s } else { b });
    let (id, h) = own.unwrap_or_else(best);
    (*h, id.clone())
}

fn snapshot(model: &GnnModel, expected: Option<&str>, ctx: &VerificationContext, test: &Graph) -> Result<Snapshot> {
    let result = verify(model, &ctx.trigger, &ctx.key, &ctx.registry, ctx.tau)?;
    let (hms, ref_id) = reference_hms(&result, expected);
    let entry = ctx.registry.get(&ref_id).ok_or_else(|| Error::Usage(format!("unknown registry id `{ref_id}`")))?;
    let probs = model.predict_proba(&ctx.trigger)?;
    let v = ldde_on_pairs(&probs, ctx.trigger.features(), &ctx.key.pairs(&ctx.trigger)?)?;
    let bce = watermark_bce(&v, &WatermarkString::new(WatermarkString::parse_bits(&entry.bits)?)?, ctx.gamma)?;
    let verified = match expected {
        Some(id) => result.matched_id.as_deref() == Some(id),
        None => result.is_copy,
    };
    Ok(Snapshot { tac: test_accuracy(model, test)?, ce: test_cross_entropy(model, test)?, hms, bce, verified })
}

pub fn run_attack(spec: &AttackSpec, model: &GnnModel, data: &SweepData) -> Result<GnnModel> {
    match spec {
        AttackSpec::None => Ok(model.clone()),
        AttackSpec::Prune { ratio, include_output } => prune_l1(model, *ratio, *include_output),
        AttackSpec::Finetune { epochs, learning_rate } => {
            finetune_attack(model, &data.val, *epochs, AdamConfig::new(*learning_rate, 1e-4))
        }
        AttackSpec::Overwrite { config } => {
            let topo = data
                .adversary_topology
                .as_ref()
                .ok_or_else(|| Error::Usage("overwrite attack needs an adversary topology".into()))?;
            Ok(overwrite_attack(model, topo, config)?.embedding.model)
        }
        AttackSpec::Extract { config } => {
            let public =
                data.public.as_ref().ok_or_else(|| Error::Usage("extraction attack needs a public query graph".into()))?;
            extract_surrogate(model, public, &model.architecture(), config)
        }
    }
}

/// Runs every attack on every model. A failing cell becomes an `error` row
/// and the sweep carries on.
pub fn run_sweep(
    grid: &[AttackSpec],
    models: &[SweepModel],
    contexts: &[VerificationContext],
    data: &SweepData,
    mut progress: impl FnMut(&SweepRow),
) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(grid.len() * models.len());
    for m in models {
        let ctx = contexts.get(m.context);
        let before = ctx
            .ok_or(Error::Index { index: m.context, len: contexts.len() })
            .and_then(|ctx| snapshot(&m.model, m.expected_id.as_deref(), ctx, &data.test));
        for spec in grid {
            let mut row = SweepRow {
                model_id: m.id.clone(),
                setting: ctx.map(|c| c.setting.clone()).unwrap_or_default(),
                attack: spec.name().into(),
                param: spec.param(),
                tac_before: None,
                tac_after: None,
                hms_before: None,
                hms_after: None,
                ce_test: None,
                bce_wm: None,
                verified: "error".into(),
                error: None,
            };
            let after = match (&before, ctx) {
                (Ok(_), Some(ctx)) => run_attack(spec, &m.model, data)
                    .and_then(|attacked| snapshot(&attacked, m.expected_id.as_deref(), ctx, &data.test)),
                (Err(e), _) => Err(Error::Usage(format!("baseline metrics failed: {e}"))),
                (Ok(_), None) => unreachable!("snapshot needs a context"),
            };
            if let Ok(b) = &before {
                row.tac_before = Some(b.tac);
                row.hms_before = Some(b.hms);
            }
            match after {
                Ok(a) => {
                    row.tac_after = Some(a.tac);
                    row.hms_after = Some(a.hms);
                    row.ce_test = Some(a.ce);
                    row.bce_wm = Some(a.bce);
                    row.verified = a.verified.to_string();
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            progress(&row);
            rows.push(row);
        }
    }
    rows
}

/// Report row comparing a model before and after an attack.
pub fn attack_report(
    model_id: &str,
    spec: &AttackSpec,
    before: &GnnModel,
    after: &GnnModel,
    expected_id: Option<&str>,
    ctx: &VerificationContext,
    test: &Graph,
) -> Result<SweepRow> {
    let b = snapshot(before, expected_id, ctx, test)?;
    let a = snapshot(after, expected_id, ctx, test)?;
    Ok(SweepRow {
        model_id: model_id.into(),
        setting: ctx.setting.clone(),
        attack: spec.name().into(),
        param: spec.param(),
        tac_before: Some(b.tac),
        tac_after: Some(a.tac),
        hms_before: Some(b.hms),
        hms_after: Some(a.hms),
        ce_test: Some(a.ce),
        bce_wm: Some(a.bce),
        verified: a.verified.to_string(),
        error: None,
    })
}

pub fn write_csv<W: io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.model_id.clone(),
            r.setting.clone(),
            r.attack.clone(),
            r.param.clone(),
            f(r.tac_before),
            f(r.tac_after),
            f(r.hms_before),
            f(r.hms_after),
            f(r.ce_test),
            f(r.bce_wm),
            r.verified.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::parse("header", format!("expected {}", CSV_HEADER.join(","))));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?)
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

/// Markdown table aggregating rows by setting, attack and parameter.
/// Watermarked and independent models are separated by whether their id
/// starts with `indep`.
pub fn summarize(rows: &[SweepRow]) -> String {
    let mut groups: BTreeMap<(String, String, String, bool), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let independent = r.model_id.starts_with("indep");
        groups.entry((r.setting.clone(), r.attack.clone(), r.param.clone(), independent)).or_default().push(r);
    }
    let mut s = String::from(
        "| setting | attack | param | models | n | tac before | tac after | hms before | hms after | verified | errors |\n\
         |---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for ((setting, attack, param, independent), rs) in groups {
        let ok: Vec<_> = rs.iter().filter(|r| !r.failed()).collect();
        let rate = (!ok.is_empty())
            .then(|| ok.iter().filter(|r| r.verified == "true").count() as f64 / ok.len() as f64);
        let _ = writeln!(
            s,
            "| {setting} | {attack} | {param} | {} | {} | {} | {} | {} | {} | {} | {} |",
            if independent { "independent" } else { "watermarked" },
            rs.len(),
            cell(mean(rs.iter().map(|r| r.tac_before))),
            cell(mean(rs.iter().map(|r| r.tac_after))),
            cell(mean(rs.iter().map(|r| r.hms_before))),
            cell(mean(rs.iter().map(|r| r.hms_after))),
            cell(rate),
            rs.len() - ok.len(),
        );
    }
    s
}
