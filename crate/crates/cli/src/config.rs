//! TOML run configuration. Every section is optional and unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use graphmark::attack::{ExtractConfig, OverwriteConfig};
use graphmark::embed::{DataFreeConfig, EmbedConfig, TriggerSynthConfig};
use graphmark::gnn::{ModelConfig, TrainConfig};
use graphmark::graph::{SbmConfig, SplitSpec};
use graphmark::rarity::RarityConfig;
use graphmark::sweep::AttackSpec;
use graphmark::verify::DEFAULT_TAU;
use graphmark::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatermarkSection {
    pub n_w: usize,
    pub tau: f64,
}

impl Default for WatermarkSection {
    fn default() -> Self {
        Self { n_w: 64, tau: DEFAULT_TAU }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub prune_ratio: f64,
    pub prune_output_layer: bool,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { prune_ratio: 0.5, prune_output_layer: false, finetune_epochs: 200, finetune_lr: 5e-5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SbmConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub watermark: WatermarkSection,
    pub embed: EmbedConfig,
    pub synth: TriggerSynthConfig,
    pub data_free: DataFreeConfig,
    pub rarity: RarityConfig,
    pub attack: AttackSection,
    pub extract: ExtractConfig,
    pub overwrite: OverwriteConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "<document>".to_string(), |s| format!("bytes {}..{}", s.start, s.end));
            Error::Parse { field, message: e.message().to_string() }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }
}

/// One verification setting of a sweep manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextEntry {
    pub setting: String,
    pub trigger: PathBuf,
    pub key: PathBuf,
    pub registry: PathBuf,
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub expected_id: Option<String>,
    /// Index into `contexts`.
    pub context: usize,
}

/// Input of the `sweep` command. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    pub test: PathBuf,
    pub val: PathBuf,
    #[serde(default)]
    pub public: Option<PathBuf>,
    #[serde(default)]
    pub adversary_topology: Option<PathBuf>,
    pub contexts: Vec<ContextEntry>,
    pub models: Vec<ModelEntry>,
    pub grid: Vec<AttackSpec>,
}

impl SweepManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
