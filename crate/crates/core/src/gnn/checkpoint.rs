//! JSON model checkpoints. Floats use shortest round-trip form, so a reload
//! reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_architecture, GnnModel, Layer, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub seed: u64,
    pub layers: Vec<LayerFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub spec: LayerSpec,
    /// Row-major `in_dim x out_dim`.
    pub weight: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neigh_weight: Option<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl From<&GnnModel> for ModelFile {
    fn from(m: &GnnModel) -> Self {
        Self {
            name: m.name.clone(),
            seed: m.seed,
            layers: m
                .layers
                .iter()
                .map(|l| LayerFile {
                    spec: l.spec,
                    weight: l.weight.as_slice().to_vec(),
                    neigh_weight: l.neigh_weight.as_ref().map(|w| w.as_slice().to_vec()),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<GnnModel> {
        let specs: Vec<LayerSpec> = self.layers.iter().map(|l| l.spec).collect();
        validate_architecture(&specs)?;
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let s = l.spec;
                let field = |name: &str| format!("layers[{i}].{name}");
                let weight = Matrix::from_vec(s.in_dim, s.out_dim, l.weight).map_err(|e| Error::parse(field("weight"), e.to_string()))?;
                let neigh_weight = match (s.kind, l.neigh_weight) {
                    (LayerKind::MeanAggregate, Some(w)) => Some(
                        Matrix::from_vec(s.in_dim, s.out_dim, w).map_err(|e| Error::parse(field("neigh_weight"), e.to_string()))?,
                    ),
                    (LayerKind::MeanAggregate, None) => {
                        return Err(Error::parse(field("neigh_weight"), "required for mean-aggregate layers"))
                    }
                    (LayerKind::NormalizedConv, None) => None,
                    (LayerKind::NormalizedConv, Some(_)) => {
                        return Err(Error::parse(field("neigh_weight"), "not allowed for normalized-conv layers"))
                    }
                };
                let bias = Matrix::from_vec(1, s.out_dim, l.bias).map_err(|e| Error::parse(field("bias"), e.to_string()))?;
                Ok(Layer { spec: s, weight, neigh_weight, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = GnnModel { name: self.name, seed: self.seed, layers };
        if !model.is_finite() {
            return Err(Error::parse("layers", "non-finite parameter"));
        }
        Ok(model)
    }
}

pub fn save_model(model: &GnnModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string(&ModelFile::from(model))?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GnnModel> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    file.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::architecture;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [LayerKind::MeanAggregate, LayerKind::NormalizedConv] {
            let m = GnnModel::new(&architecture(kind, 5, 7, 3, 4), 9).unwrap();
            let path = dir.path().join("m.json");
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            for (a, b) in m.params().iter().zip(back.params()) {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            assert_eq!(back, m);
        }
    }

    #[test]
    fn wrong_weight_length_is_reported() {
        let m = GnnModel::new(&architecture(LayerKind::NormalizedConv, 2, 3, 2, 2), 0).unwrap();
        let mut file = ModelFile::from(&m);
        file.layers[1].weight.pop();
        assert!(matches!(file.into_model(), Err(Error::Parse { field, .. }) if field == "layers[1].weight"));
    }
}
