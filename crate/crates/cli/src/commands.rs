//! Command definitions and their implementations. Each command fronts one
//! library operation and writes its artifacts to disk.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphmark::attack::{
    extract_surrogate, finetune_attack, overwrite_attack, prune_l1, public_query_graph, ExtractConfig,
};
use graphmark::collision::{collision_alpha, collision_threshold, exact_binomial_tail, monte_carlo_tail};
use graphmark::embed::{embed_setting1, embed_setting2, embed_setting3, synth_trigger_setting2, EmbedOutcome};
use graphmark::gnn::{load_model, save_model, test_accuracy, train_primary, GnnModel, LayerKind};
use graphmark::graph::{
    convert_csv, generate_ba, generate_er, generate_sbm, induced_split, load_graph, save_graph,
};
use graphmark::optim::AdamConfig;
use graphmark::rarity::select_key_setting2;
use graphmark::sweep::{
    attack_report, read_csv, run_sweep, summarize, write_csv, AttackSpec, SweepData, SweepModel,
    VerificationContext,
};
use graphmark::verify::{verify, PredictionProvider};
use graphmark::watermark::{
    gen_watermark, load_key, load_registry, save_key, save_registry, select_key_setting1, BitOrigin,
    WatermarkRegistry, WatermarkString,
};

use crate::client::RemoteProvider;
use crate::config::{RunConfig, SweepManifest};
use crate::server::{serve_blocking, BIND_ENV, DEFAULT_BIND};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_A_COPY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] graphmark::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Pipeline(graphmark::Error::Usage(_)) => EXIT_USAGE,
            CliError::Pipeline(_) => EXIT_PIPELINE,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "graphmark", version, about = "Multi-bit black-box watermarking for node-classification GNNs")]
pub struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic graph (and, for labeled graphs, its induced split).
    GenData(GenDataArgs),
    /// Train a primary node classifier.
    Train(TrainArgs),
    /// Select watermark key edges on a trigger graph.
    MakeKey(MakeKeyArgs),
    /// Draw a watermark string and register it under a distribution id.
    GenWm(GenWmArgs),
    /// Embed a registered watermark into a model.
    Embed(EmbedArgs),
    /// Synthesize trigger features on a given topology.
    SynthTrigger(SynthArgs),
    /// Query a suspect model once and decide whether it is a copy.
    Verify(VerifyArgs),
    /// Run an adversarial modification on a model.
    Attack(AttackArgs),
    /// Collision probability and threshold calculus.
    Collision(CollisionArgs),
    /// Run an attack grid over a model population.
    Sweep(SweepArgs),
    /// Summarize a sweep CSV as a markdown table.
    Report(ReportArgs),
    /// Serve a model as a black-box probability API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    Sbm,
    Er,
    Ba,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "sbm")]
    pub kind: GraphKind,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Edge probability for `--kind er`.
    #[arg(long, default_value_t = 0.01)]
    pub edge_p: f64,
    /// Attachment count for `--kind ba`.
    #[arg(long, default_value_t = 2)]
    pub attach_m: usize,
    /// Import `NODES.csv EDGES.csv` instead of generating.
    #[arg(long, num_args = 2, value_names = ["NODES", "EDGES"])]
    pub from_csv: Option<Vec<PathBuf>>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Layer family: mean-aggregate (sage) or normalized-conv (gcn).
    #[arg(long)]
    pub kind: Option<LayerKind>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report test accuracy on this graph.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MakeKeyArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub setting: u8,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub trigger: PathBuf,
    #[arg(long)]
    pub nw: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenWmArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub nw: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Register this exact bit string instead of drawing one. Such entries
    /// carry no collision certificate.
    #[arg(long)]
    pub bits: Option<String>,
    #[arg(long)]
    pub timestamp: Option<String>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub setting: u8,
    #[arg(long)]
    pub model: PathBuf,
    /// Trigger graph; defaults to `--train` in setting 1.
    #[arg(long)]
    pub trigger: Option<PathBuf>,
    /// Labeled training graph (settings 1 and 2).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Keep training until max-epochs even after exact extraction.
    #[arg(long)]
    pub no_stop: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the per-epoch loss and HMS curve as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Report test accuracy before and after on this graph.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub feature_lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    File,
    Url,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub provider: ProviderKind,
    /// Model checkpoint for `--provider file`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Service root for `--provider url`.
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub trigger: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttackKind {
    Prune,
    Finetune,
    Overwrite,
    Extract,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long, value_enum)]
    pub kind: AttackKind,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub include_output: bool,
    /// Fine-tuning graph.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adversary topology for overwriting.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long)]
    pub nw: Option<usize>,
    /// Training graph the extraction query set is sampled from.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Query a remote service instead of the local checkpoint.
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// With --trigger, --key and --registry, print a before/after report.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub trigger: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Registered id of the attacked model, if it is watermarked.
    #[arg(long)]
    pub expected_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct CollisionArgs {
    #[arg(long)]
    pub nw: usize,
    #[arg(long, conflicts_with = "alpha")]
    pub tau: Option<f64>,
    /// Print the threshold for this collision probability instead.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also print the exact binomial tail.
    #[arg(long)]
    pub exact: bool,
    /// Also estimate the tail from this many random string pairs.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// JSON manifest listing graphs, verification contexts, models and the grid.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = BIND_ENV, default_value = DEFAULT_BIND)]
    pub bind: String,
}

/// What a successful command reports to the process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotACopy,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Done => EXIT_OK,
            Outcome::NotACopy => EXIT_NOT_A_COPY,
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("--config {}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(&cfg, a, out),
        Command::Train(a) => train(&cfg, a, out),
        Command::MakeKey(a) => make_key(&cfg, a, out),
        Command::GenWm(a) => gen_wm(&cfg, a, out),
        Command::Embed(a) => embed(&cfg, a, out),
        Command::SynthTrigger(a) => synth(&cfg, a, out),
        Command::Verify(a) => verify_cmd(&cfg, a, out),
        Command::Attack(a) => attack(&cfg, a, out),
        Command::Collision(a) => collision(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Report(a) => report(a, out),
        Command::Serve(a) => serve(a, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(graphmark::Error::from)?
    };
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(graphmark::Error::from)?;
    Ok(())
}

fn gen_data(cfg: &RunConfig, a: GenDataArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    ensure_dir(&a.out)?;
    let mut sbm = cfg.data;
    sbm.num_nodes = a.nodes.unwrap_or(sbm.num_nodes);
    sbm.num_classes = a.classes.unwrap_or(sbm.num_classes);
    sbm.feature_dim = a.dim.unwrap_or(sbm.feature_dim);
    sbm.feature_shift = a.shift.unwrap_or(sbm.feature_shift);
    sbm.seed = a.seed.unwrap_or(sbm.seed);
    let g = match (&a.from_csv, a.kind) {
        (Some(paths), _) => {
            let name = paths[0].file_stem().and_then(|s| s.to_str()).unwrap_or("imported");
            convert_csv(&paths[0], &paths[1], name)?
        }
        (None, GraphKind::Sbm) => generate_sbm(&sbm)?,
        (None, GraphKind::Er) => generate_er(sbm.num_nodes, a.edge_p, sbm.feature_dim, sbm.seed)?,
        (None, GraphKind::Ba) => generate_ba(sbm.num_nodes, a.attach_m, sbm.feature_dim, sbm.seed)?,
    };
    save_graph(&g, a.out.join("graph.json"))?;
    say!(out, "graph: {} nodes, {} edges, dim {}", g.num_nodes(), g.num_edges(), g.feature_dim());
    if g.labels().is_some() {
        let split = induced_split(&g, &cfg.split)?;
        for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            save_graph(part, a.out.join(format!("{name}.json")))?;
            say!(out, "{name}: {} nodes, {} edges", part.num_nodes(), part.num_edges());
        }
    }
    Ok(Outcome::Done)
}

fn train(cfg: &RunConfig, a: TrainArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let g = load_graph(&a.train)?;
    let classes = g.num_classes().ok_or_else(|| usage("--train graph must be labeled"))?;
    let mut mc = cfg.model;
    mc.kind = a.kind.unwrap_or(mc.kind);
    mc.hidden = a.hidden.unwrap_or(mc.hidden);
    mc.num_layers = a.layers.unwrap_or(mc.num_layers);
    let mut tc = cfg.train;
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
    tc.weight_decay = a.weight_decay.unwrap_or(tc.weight_decay);
    tc.seed = a.seed.unwrap_or(tc.seed);
    let model = train_primary(&g, &mc.architecture(g.feature_dim(), classes), &tc)?;
    save_model(&model, &a.out)?;
    say!(out, "trained {} ({} epochs)", model.name, tc.epochs);
    if let Some(t) = &a.test {
        say!(out, "test accuracy: {:.4}", test_accuracy(&model, &load_graph(t)?)?);
    }
    Ok(Outcome::Done)
}

fn make_key(cfg: &RunConfig, a: MakeKeyArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let model = load_model(&a.model)?;
    let t = load_graph(&a.trigger)?;
    let n_w = a.nw.unwrap_or(cfg.watermark.n_w);
    let key = match a.setting {
        1 => select_key_setting1(&t, &model, n_w)?,
        _ => {
            let mut rc = cfg.rarity;
            rc.seed = a.seed.unwrap_or(rc.seed);
            select_key_setting2(&t, &model, n_w, &rc)?
        }
    };
    save_key(&key, &a.out)?;
    say!(out, "key: {} edges on `{}`", key.len(), key.trigger_graph_name);
    Ok(Outcome::Done)
}

fn gen_wm(cfg: &RunConfig, a: GenWmArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let mut registry = if a.registry.exists() { load_registry(&a.registry)? } else { WatermarkRegistry::new() };
    let (w, origin) = match &a.bits {
        Some(bits) => (WatermarkString::new(WatermarkString::parse_bits(bits)?)?, BitOrigin::Custom),
        None => (gen_watermark(a.nw.unwrap_or(cfg.watermark.n_w), a.seed)?, BitOrigin::Bernoulli),
    };
    registry.register(a.id.clone(), &w, origin, a.timestamp)?;
    save_registry(&registry, &a.registry)?;
    say!(out, "{}: {w}", a.id);
    Ok(Outcome::Done)
}

fn registered_string(registry: &WatermarkRegistry, id: &str) -> CliResult<WatermarkString> {
    let entry = registry.get(id).ok_or_else(|| usage(format!("--id `{id}` is not in the registry")))?;
    Ok(WatermarkString::new(WatermarkString::parse_bits(&entry.bits)?)?)
}

fn embed(cfg: &RunConfig, a: EmbedArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let m_o = load_model(&a.model)?;
    let key = load_key(&a.key)?;
    let w = registered_string(&load_registry(&a.registry)?, &a.id)?;
    let mut ec = cfg.embed;
    ec.learning_rate = a.lr.unwrap_or(ec.learning_rate);
    ec.max_epochs = a.max_epochs.unwrap_or(ec.max_epochs);
    ec.gamma = a.gamma.unwrap_or(ec.gamma);
    ec.seed = a.seed.unwrap_or(ec.seed);
    if a.no_stop {
        ec.stop_on_exact = false;
    }
    let train = a.train.as_ref().map(load_graph).transpose()?;
    let trigger = match (&a.trigger, &train, a.setting) {
        (Some(p), _, _) => load_graph(p)?,
        (None, Some(g), 1) => g.clone(),
        _ => return Err(usage("--trigger is required")),
    };
    let outcome: EmbedOutcome = match a.setting {
        1 | 2 => {
            let g = train.as_ref().ok_or_else(|| usage("--train is required for settings 1 and 2"))?;
            if a.setting == 1 {
                embed_setting1(&m_o, g, &trigger, &key, &w, &ec)?
            } else {
                embed_setting2(&m_o, g, &trigger, &key, &w, &ec)?
            }
        }
        _ => embed_setting3(&m_o, &trigger, &key, &w, &ec, &cfg.data_free)?,
    };
    let mut model = outcome.model.clone();
    model.name = a.id.clone();
    save_model(&model, &a.out)?;
    if let Some(p) = &a.curve {
        std::fs::write(p, outcome.curve_csv()).map_err(graphmark::Error::from)?;
    }
    say!(out, "{}", outcome.summary());
    if let Some(t) = &a.test {
        let t = load_graph(t)?;
        say!(out, "test accuracy: {:.4} -> {:.4}", test_accuracy(&m_o, &t)?, test_accuracy(&model, &t)?);
    }
    if !outcome.success {
        return Err(graphmark::Error::Numeric(format!(
            "embedding stopped at max-epochs without exact extraction (best hms {:.4})",
            outcome.best_hms
        ))
        .into());
    }
    Ok(Outcome::Done)
}

fn synth(cfg: &RunConfig, a: SynthArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let m = load_model(&a.model)?;
    let topo = load_graph(&a.topology)?;
    let mut sc = cfg.synth;
    sc.lambda1 = a.lambda1.unwrap_or(sc.lambda1);
    sc.feature_lr = a.feature_lr.unwrap_or(sc.feature_lr);
    sc.synth_epochs = a.epochs.unwrap_or(sc.synth_epochs);
    sc.seed = a.seed.unwrap_or(sc.seed);
    let t = synth_trigger_setting2(&m, &topo, &sc)?;
    save_graph(&t, &a.out)?;
    say!(out, "trigger `{}`: {} nodes, {} edges", t.name(), t.num_nodes(), t.num_edges());
    Ok(Outcome::Done)
}

fn provider_for(kind: ProviderKind, model: &Option<PathBuf>, url: &Option<String>) -> CliResult<Box<dyn PredictionProvider>> {
    Ok(match kind {
        ProviderKind::File => {
            Box::new(load_model(model.as_ref().ok_or_else(|| usage("--model is required with --provider file"))?)?)
        }
        ProviderKind::Url => {
            Box::new(RemoteProvider::new(url.as_ref().ok_or_else(|| usage("--url is required with --provider url"))?)?)
        }
    })
}

fn verify_cmd(cfg: &RunConfig, a: VerifyArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let provider = provider_for(a.provider, &a.model, &a.url)?;
    let t = load_graph(&a.trigger)?;
    let key = load_key(&a.key)?;
    let registry = load_registry(&a.registry)?;
    let result = verify(provider.as_ref(), &t, &key, &registry, a.tau.unwrap_or(cfg.watermark.tau))?;
    write!(out, "{}", result.report()).map_err(graphmark::Error::from)?;
    Ok(if result.is_copy { Outcome::Done } else { Outcome::NotACopy })
}

fn attack(cfg: &RunConfig, a: AttackArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let model = load_model(&a.model)?;
    let seed = a.seed;
    let (spec, attacked) = match a.kind {
        AttackKind::Prune => {
            let ratio = a.ratio.unwrap_or(cfg.attack.prune_ratio);
            let include_output = a.include_output || cfg.attack.prune_output_layer;
            (AttackSpec::Prune { ratio, include_output }, prune_l1(&model, ratio, include_output)?)
        }
        AttackKind::Finetune => {
            let val = load_graph(a.val.as_ref().ok_or_else(|| usage("--val is required for fine-tuning"))?)?;
            let epochs = a.epochs.unwrap_or(cfg.attack.finetune_epochs);
            let lr = a.lr.unwrap_or(cfg.attack.finetune_lr);
            (
                AttackSpec::Finetune { epochs, learning_rate: lr },
                finetune_attack(&model, &val, epochs, AdamConfig::new(lr, cfg.embed.weight_decay))?,
            )
        }
        AttackKind::Overwrite => {
            let topo =
                load_graph(a.topology.as_ref().ok_or_else(|| usage("--topology is required for overwriting"))?)?;
            let mut oc = cfg.overwrite;
            oc.n_w = a.nw.unwrap_or(oc.n_w);
            oc.seed = seed.unwrap_or(oc.seed);
            let ow = overwrite_attack(&model, &topo, &oc)?;
            say!(out, "adversary watermark: {}", ow.watermark);
            say!(out, "adversary embedding: {}", ow.embedding.summary());
            (AttackSpec::Overwrite { config: oc }, ow.embedding.model)
        }
        AttackKind::Extract => {
            let g = load_graph(a.train.as_ref().ok_or_else(|| usage("--train is required for extraction"))?)?;
            let ec = ExtractConfig {
                epochs: a.epochs.unwrap_or(cfg.extract.epochs),
                learning_rate: a.lr.unwrap_or(cfg.extract.learning_rate),
                seed: seed.unwrap_or(cfg.extract.seed),
                ..cfg.extract
            };
            let public = public_query_graph(&g, ec.query_fraction, ec.seed)?;
            let surrogate = match &a.url {
                Some(url) => extract_surrogate(&RemoteProvider::new(url)?, &public, &model.architecture(), &ec)?,
                None => extract_surrogate(&model, &public, &model.architecture(), &ec)?,
            };
            (AttackSpec::Extract { config: ec }, surrogate)
        }
    };
    save_model(&attacked, &a.out)?;
    say!(out, "{} attack ({}) written to {}", spec.name(), spec.param(), a.out.display());
    if let (Some(test), Some(trigger), Some(key), Some(registry)) = (&a.test, &a.trigger, &a.key, &a.registry) {
        let ctx = VerificationContext {
            setting: String::new(),
            trigger: load_graph(trigger)?,
            key: load_key(key)?,
            registry: load_registry(registry)?,
            tau: cfg.watermark.tau,
            gamma: cfg.embed.gamma,
        };
        let row = attack_report(&model.name, &spec, &model, &attacked, a.expected_id.as_deref(), &ctx, &load_graph(test)?)?;
        let f = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.4}"));
        say!(out, "tac: {} -> {}", f(row.tac_before), f(row.tac_after));
        say!(out, "hms: {} -> {}", f(row.hms_before), f(row.hms_after));
        say!(out, "verified after attack: {}", row.verified);
    }
    Ok(Outcome::Done)
}

fn collision(a: CollisionArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    if let Some(alpha) = a.alpha {
        say!(out, "tau = {:.6}", collision_threshold(a.nw, alpha)?);
        return Ok(Outcome::Done);
    }
    let tau = a.tau.ok_or_else(|| usage("one of --tau or --alpha is required"))?;
    say!(out, "alpha = {:.3e}", collision_alpha(a.nw, tau)?);
    if a.exact {
        say!(out, "exact binomial tail = {:.3e}", exact_binomial_tail(a.nw, tau)?);
    }
    if let Some(trials) = a.mc {
        say!(out, "monte carlo tail ({trials} pairs) = {:.3e}", monte_carlo_tail(a.nw, tau, trials, a.seed)?);
    }
    Ok(Outcome::Done)
}

fn sweep(a: SweepArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let manifest = SweepManifest::load(&a.manifest)?;
    let base = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let at = |p: &Path| base.join(p);
    let data = SweepData {
        test: load_graph(at(&manifest.test))?,
        val: load_graph(at(&manifest.val))?,
        public: manifest.public.as_deref().map(|p| load_graph(at(p))).transpose()?,
        adversary_topology: manifest.adversary_topology.as_deref().map(|p| load_graph(at(p))).transpose()?,
    };
    let contexts = manifest
        .contexts
        .iter()
        .map(|c| {
            Ok(VerificationContext {
                setting: c.setting.clone(),
                trigger: load_graph(at(&c.trigger))?,
                key: load_key(at(&c.key))?,
                registry: load_registry(at(&c.registry))?,
                tau: c.tau.unwrap_or(graphmark::verify::DEFAULT_TAU),
                gamma: graphmark::embed::EmbedConfig::default().gamma,
            })
        })
        .collect::<graphmark::Result<Vec<_>>>()?;
    let models = manifest
        .models
        .iter()
        .map(|m| {
            Ok(SweepModel {
                id: m.id.clone(),
                model: load_model(at(&m.path))?,
                expected_id: m.expected_id.clone(),
                context: m.context,
            })
        })
        .collect::<graphmark::Result<Vec<_>>>()?;
    let mut log = std::io::stderr();
    let rows = run_sweep(&manifest.grid, &models, &contexts, &data, |r| {
        let _ = writeln!(log, "{} {} {}: {}", r.model_id, r.attack, r.param, r.error.as_deref().unwrap_or(&r.verified));
    });
    let file = std::fs::File::create(&a.out).map_err(graphmark::Error::from)?;
    write_csv(&rows, file)?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    say!(out, "{} rows written to {} ({failed} failed)", rows.len(), a.out.display());
    Ok(Outcome::Done)
}

fn report(a: ReportArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let rows = read_csv(std::fs::File::open(&a.csv).map_err(graphmark::Error::from)?)?;
    let table = summarize(&rows);
    match &a.out {
        Some(p) => std::fs::write(p, &table).map_err(graphmark::Error::from)?,
        None => write!(out, "{table}").map_err(graphmark::Error::from)?,
    }
    Ok(Outcome::Done)
}

fn serve(a: ServeArgs, out: &mut dyn std::io::Write) -> CliResult<Outcome> {
    let model: GnnModel = load_model(&a.model)?;
    serve_blocking(model, &a.bind, |addr| {
        let _ = writeln!(out, "serving on http://{addr}");
        let _ = out.flush();
    })
    .map_err(graphmark::Error::from)?;
    Ok(Outcome::Done)
}
