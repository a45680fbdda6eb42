use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, CiModel, ModelConfig, MlpNet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::synthdata::{read_json, write_json};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Self-describing model snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub model: ModelConfig,
    /// Free-form echo of the resolved experiment configuration.
    pub config: serde_json::Value,
    pub obs_log_std: f64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &CiModel, config: &ModelConfig, seed: u64, echo: serde_json::Value) -> Self {
        let mut model_cfg = config.clone();
        model_cfg.mode = model.mode;
        model_cfg.fusion = model.fusion;
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            seed,
            model: model_cfg,
            config: echo,
            obs_log_std: model.obs_log_std,
            tensors: model
                .named_params()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model; every expected tensor must be present with the
    /// architecture's shape.
    pub fn to_model(&self) -> Result<CiModel> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let mut model = build_model(&self.model, 0)?;
        let lookup = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Data(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            Tensor::new(t.shape.clone(), t.data.clone())
        };
        let load = |prefix: &str, net: &MlpNet| -> Result<MlpNet> {
            let mut layers = net.layers().to_vec();
            for (i, layer) in layers.iter_mut().enumerate() {
                layer.weight = lookup(&format!("{prefix}.{i}.weight"), layer.weight.shape())?;
                layer.bias = lookup(&format!("{prefix}.{i}.bias"), layer.bias.shape())?;
            }
            MlpNet::new(layers)
        };
        model.prior_net = load("prior", &model.prior_net)?;
        model.encoder_net = load("encoder", &model.encoder_net)?;
        model.decoder_net = load("decoder", &model.decoder_net)?;
        model.obs_log_std = self.obs_log_std;
        if self.tensors.len() != model.named_params().len() {
            return Err(Error::Data("checkpoint has unexpected extra tensors".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Mode;
    use crate::synthdata::Scheme;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig::for_scheme(Scheme::Quadratic, 7, 1, Mode::Ivae);
        let m = build_model(&cfg, 12).unwrap();
        let ck = Checkpoint::from_model(&m, &cfg, 12, serde_json::json!({"note": "x"}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = ModelConfig::for_scheme(Scheme::Sine, 7, 1, Mode::Ci);
        let m = build_model(&cfg, 1).unwrap();
        let mut ck = Checkpoint::from_model(&m, &cfg, 1, serde_json::Value::Null);
        ck.tensors[0].shape = vec![2, 60];
        assert!(matches!(ck.to_model(), Err(Error::Data(_))));
    }
}
