//! Watermark strings, keys and the registry of distributed strings.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::GnnModel;
use crate::graph::Graph;
use crate::ldde::{ldde_vector, LddeVector};
use crate::rng::seeded;

/// The bit payload embedded into one distributed model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WatermarkString {
    pub bits: Vec<bool>,
    pub meta: Option<String>,
}

impl WatermarkString {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Config("a watermark needs at least one bit".into()));
        }
        Ok(Self { bits, meta: None })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Parses a string of `0` / `1` characters.
    pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
        s.chars()
            .enumerate()
            .map(|(i, c)| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::parse("bits", format!("character {i} is `{c}`, expected 0 or 1"))),
            })
            .collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl fmt::Display for WatermarkString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&bits_to_string(&self.bits))
    }
}

pub fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// `n_w` independent fair bits.
pub fn gen_watermark(n_w: usize, seed: u64) -> Result<WatermarkString> {
    let mut rng = seeded(seed);
    WatermarkString::new((0..n_w).map(|_| rng.random::<bool>()).collect())
}

/// Edge indices into a trigger graph whose LDDE signs carry the bits, in
/// ascending edge-index order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkKey {
    pub trigger_graph_name: String,
    pub n_w: usize,
    pub edge_indices: Vec<usize>,
}

impl WatermarkKey {
    pub fn new(trigger_graph_name: impl Into<String>, mut edge_indices: Vec<usize>) -> Result<Self> {
        edge_indices.sort_unstable();
        if edge_indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("watermark key repeats an edge".into()));
        }
        if edge_indices.is_empty() {
            return Err(Error::Config("watermark key is empty".into()));
        }
        Ok(Self { trigger_graph_name: trigger_graph_name.into(), n_w: edge_indices.len(), edge_indices })
    }

    pub fn len(&self) -> usize {
        self.edge_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_indices.is_empty()
    }

    /// Endpoints of the key edges in `t`, in key order.
    pub fn pairs(&self, t: &Graph) -> Result<Vec<(usize, usize)>> {
        self.validate_for(t)?;
        Ok(self.edge_indices.iter().map(|&i| t.edges()[i]).collect())
    }

    pub fn validate_for(&self, t: &Graph) -> Result<()> {
        if let Some(&bad) = self.edge_indices.iter().find(|&&i| i >= t.num_edges()) {
            return Err(Error::Index { index: bad, len: t.num_edges() });
        }
        Ok(())
    }

    pub fn check_watermark(&self, w: &WatermarkString) -> Result<()> {
        if w.len() != self.len() {
            return Err(Error::Length(format!("watermark has {} bits, key has {} edges", w.len(), self.len())));
        }
        Ok(())
    }

    fn validate_file(&self) -> Result<()> {
        if self.n_w != self.edge_indices.len() {
            return Err(Error::parse("n_w", format!("{} but {} edge indices listed", self.n_w, self.edge_indices.len())));
        }
        let mut seen = HashSet::new();
        if let Some(i) = self.edge_indices.iter().position(|e| !seen.insert(*e)) {
            return Err(Error::parse(format!("edge_indices[{i}]"), "duplicate edge index"));
        }
        Ok(())
    }
}

pub fn save_key(key: &WatermarkKey, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(key)?)?;
    Ok(())
}

pub fn load_key(path: impl AsRef<Path>) -> Result<WatermarkKey> {
    let key: WatermarkKey = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    key.validate_file()?;
    Ok(key)
}

/// The `n_w` candidates with the smallest `|LDDE|`, ties by edge index.
pub fn smallest_abs(ldde: &LddeVector, candidates: &[usize], n_w: usize) -> Result<Vec<usize>> {
    if n_w == 0 {
        return Err(Error::Config("N_w must be at least 1".into()));
    }
    if candidates.len() < n_w {
        return Err(Error::Capacity { needed: n_w, available: candidates.len() });
    }
    let mut scored = candidates.iter().map(|&i| Ok((ldde.get(i)?.abs(), i))).collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored[..n_w].iter().map(|&(_, i)| i).collect())
}

/// Key for a model whose training graph doubles as the trigger graph:
/// cross-label edges with LDDE closest to zero.
pub fn select_key_setting1(g_train: &Graph, m: &GnnModel, n_w: usize) -> Result<WatermarkKey> {
    let candidates = g_train.cross_label_edges()?;
    if candidates.len() < n_w {
        return Err(Error::Capacity { needed: n_w, available: candidates.len() });
    }
    let ldde = ldde_vector(&m.predict_proba(g_train)?, g_train)?;
    WatermarkKey::new(g_train.name(), smallest_abs(&ldde, &candidates, n_w)?)
}

/// How the bits of a registry entry were produced. Only fair coin flips
/// support a collision-probability certificate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BitOrigin {
    Bernoulli,
    #[default]
    Custom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub id: String,
    pub bits: String,
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub meta: Option<String>,
    #[serde(default)]
    pub origin: BitOrigin,
}

impl RegistryEntry {
    pub fn watermark(&self) -> Result<WatermarkString> {
        let mut w = WatermarkString::new(WatermarkString::parse_bits(&self.bits)?)?;
        w.meta.clone_from(&self.meta);
        Ok(w)
    }
}

/// Every watermark string handed out, keyed by distribution id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WatermarkRegistry {
    entries: Vec<RegistryEntry>,
}

impl WatermarkRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn insert(&mut self, entry: RegistryEntry) -> Result<()> {
        WatermarkString::parse_bits(&entry.bits)?;
        if self.get(&entry.id).is_some() {
            return Err(Error::Config(format!("distribution id `{}` is already registered", entry.id)));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Registers a string and returns its entry.
    pub fn register(
        &mut self,
        id: impl Into<String>,
        w: &WatermarkString,
        origin: BitOrigin,
        timestamp: Option<String>,
    ) -> Result<&RegistryEntry> {
        self.insert(RegistryEntry { id: id.into(), bits: w.to_string(), timestamp, meta: w.meta.clone(), origin })?;
        Ok(self.entries.last().expect("just inserted"))
    }

    /// Bit strings in registry order.
    pub fn watermarks(&self) -> Result<Vec<(String, Vec<bool>)>> {
        self.entries
            .iter()
            .map(|e| Ok((e.id.clone(), WatermarkString::parse_bits(&e.bits)?)))
            .collect()
    }

    pub fn all_bernoulli(&self) -> bool {
        self.entries.iter().all(|e| e.origin == BitOrigin::Bernoulli)
    }
}

pub fn save_registry(reg: &WatermarkRegistry, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(reg)?)?;
    Ok(())
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<WatermarkRegistry> {
    let raw: WatermarkRegistry = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut reg = WatermarkRegistry::new();
    for (i, e) in raw.entries.into_iter().enumerate() {
        reg.insert(e).map_err(|err| Error::parse(format!("[{i}]"), err.to_string()))?;
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn watermark_is_seed_deterministic() {
        assert_eq!(gen_watermark(200, 4).unwrap(), gen_watermark(200, 4).unwrap());
        assert_ne!(gen_watermark(200, 4).unwrap(), gen_watermark(200, 5).unwrap());
        assert_eq!(gen_watermark(200, 0).unwrap().len(), 200);
        assert!(gen_watermark(0, 0).is_err());
    }

    #[test]
    fn distinct_seeds_are_half_similar() {
        let strings: Vec<_> = (0..1001).map(|s| gen_watermark(200, s).unwrap().bits).collect();
        let mean = strings
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).filter(|(a, b)| a == b).count() as f64 / 200.0)
            .sum::<f64>()
            / 1000.0;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
    }

    #[test]
    fn bits_round_trip_through_text() {
        let w = gen_watermark(37, 1).unwrap();
        assert_eq!(WatermarkString::parse_bits(&w.to_string()).unwrap(), w.bits);
        assert!(WatermarkString::parse_bits("01x").is_err());
    }

    #[test]
    fn smallest_abs_orders_and_breaks_ties() {
        let v = LddeVector(vec![0.01, -0.5, 0.02, 0.9]);
        assert_eq!(smallest_abs(&v, &[0, 1, 2, 3], 2).unwrap(), vec![0, 2]);
        let tie = LddeVector(vec![0.3, -0.1, 0.1, 0.2]);
        assert_eq!(smallest_abs(&tie, &[3, 2, 1, 0], 2).unwrap(), vec![1, 2]);
        assert!(matches!(smallest_abs(&v, &[0], 2), Err(Error::Capacity { needed: 2, available: 1 })));
    }

    #[test]
    fn setting1_without_cross_edges_is_capacity_error() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let g = Graph::new("same", x, [(0, 1), (1, 2)], Some(vec![0, 0, 0])).unwrap();
        let m = GnnModel::new(&crate::gnn::architecture(crate::gnn::LayerKind::MeanAggregate, 2, 4, 2, 2), 0).unwrap();
        assert!(matches!(select_key_setting1(&g, &m, 1), Err(Error::Capacity { available: 0, .. })));
    }

    #[test]
    fn key_and_registry_files() {
        let dir = tempfile::tempdir().unwrap();
        let key = WatermarkKey::new("t", vec![9, 2, 5]).unwrap();
        assert_eq!(key.edge_indices, vec![2, 5, 9]);
        save_key(&key, dir.path().join("k.json")).unwrap();
        assert_eq!(load_key(dir.path().join("k.json")).unwrap(), key);
        assert!(WatermarkKey::new("t", vec![1, 1]).is_err());

        let mut reg = WatermarkRegistry::new();
        reg.register("a", &gen_watermark(8, 0).unwrap(), BitOrigin::Bernoulli, None).unwrap();
        reg.register("b", &gen_watermark(8, 1).unwrap(), BitOrigin::Bernoulli, Some("2026-01-01".into())).unwrap();
        assert!(reg.register("a", &gen_watermark(8, 2).unwrap(), BitOrigin::Bernoulli, None).is_err());
        save_registry(&reg, dir.path().join("r.json")).unwrap();
        let back = load_registry(dir.path().join("r.json")).unwrap();
        assert_eq!(back, reg);
        assert!(back.all_bernoulli());

        std::fs::write(dir.path().join("dup.json"), r#"[{"id":"x","bits":"01"},{"id":"x","bits":"10"}]"#).unwrap();
        assert!(load_registry(dir.path().join("dup.json")).is_err());
        let plain: WatermarkRegistry = serde_json::from_str(r#"[{"id":"x","bits":"01"}]"#).unwrap();
        assert!(!plain.all_bernoulli());
    }
}
