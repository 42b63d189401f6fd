//! `DSUT` checkpoints: trainable network, run configuration and optimizer state.
//!
//! Tensor names: network parameters as registered, `config` (the canonical config
//! text, one byte per f32 element), `optim.step`, then `optim.m.<name>` and
//! `optim.v.<name>` per trainable tensor.

use std::path::Path;

use super::optim::{Moments, OptimState};
use crate::config::RunConfig;
use crate::encoders::{decode, encode, NamedTensors, CHECKPOINT_MAGIC};
use crate::error::{DsuError, Result};
use crate::model::DsuNet;
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub net: DsuNet<f32>,
    pub optim: OptimState,
}

fn text_tensor(s: &str) -> Tensor<f32> {
    let bytes = s.as_bytes();
    let data = if bytes.is_empty() { vec![0.0] } else { bytes.iter().map(|&b| b as f32).collect() };
    Tensor::from_vec(&[data.len()], data).expect("non-empty")
}

fn tensor_text(t: &Tensor<f32>, path: &Path) -> Result<String> {
    let bytes: Option<Vec<u8>> =
        t.data().iter().map(|&v| if v.fract() == 0.0 && (0.0..256.0).contains(&v) { Some(v as u8) } else { None }).collect();
    bytes
        .and_then(|b| String::from_utf8(b).ok())
        .map(|s| s.trim_end_matches('\0').to_owned())
        .ok_or_else(|| DsuError::Truncated { path: path.to_owned(), detail: "config tensor is not UTF-8 text".into() })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = text_tensor(&self.config.to_text());
        let step = Tensor::from_vec(&[1], vec![self.optim.step as f32])?;
        let mut named = self.net.named_params();
        named.push(("config".into(), &config));
        named.push(("optim.step".into(), &step));
        for mo in &self.optim.moments {
            named.push((format!("optim.m.{}", mo.name), &mo.m));
            named.push((format!("optim.v.{}", mo.name), &mo.v));
        }
        encode(CHECKPOINT_MAGIC, &named)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| DsuError::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut tensors: NamedTensors = decode(bytes, CHECKPOINT_MAGIC, path)?;
        let mut take = |name: &str| -> Result<Tensor<f32>> {
            let pos = tensors.iter().position(|(n, _)| n == name).ok_or_else(|| DsuError::MissingTensor(name.into()))?;
            Ok(tensors.remove(pos).1)
        };
        let text = tensor_text(&take("config")?, path)?;
        let config = RunConfig::parse(&text, path)?;
        let mut net = DsuNet::<f32>::new(&config.model, 0)?;
        for (name, dst) in net.named_params_mut() {
            let src = take(&name)?;
            if src.shape() != dst.shape() {
                return Err(DsuError::ProfileShape { name, expected: dst.shape().to_vec(), found: src.shape().to_vec() });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        let step = take("optim.step")?.data()[0] as u64;
        let mut moments = Vec::new();
        for (name, p) in net.named_params() {
            if !p.trainable {
                continue;
            }
            let m = take(&format!("optim.m.{name}"))?;
            let v = take(&format!("optim.v.{name}"))?;
            for t in [&m, &v] {
                if t.shape() != p.shape() {
                    return Err(DsuError::ProfileShape {
                        name: format!("optimizer moment of {name}"),
                        expected: p.shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
            }
            moments.push(Moments { name, m, v });
        }
        if let Some((extra, _)) = tensors.first() {
            return Err(DsuError::Truncated { path: path.to_owned(), detail: format!("unexpected tensor {extra}") });
        }
        Ok(Self { config, net, optim: OptimState { step, moments } })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DsuError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FusionVariant;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut config = RunConfig::default();
        config.model.variant = FusionVariant::C;
        config.model.reduced_channels = 8;
        config.max_steps = Some(3);
        let net = DsuNet::<f32>::new(&config.model, 7).unwrap();
        let mut optim = OptimState::for_params(&net.named_params());
        optim.step = 12;
        optim.moments[0].m.data_mut()[0] = 0.25;
        let a = Checkpoint { config, net, optim }.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a, Path::new("a")).unwrap();
        assert_eq!(back.optim.step, 12);
        assert_eq!(back.config.model.variant, FusionVariant::C);
        assert_eq!(back.to_bytes().unwrap(), a);
    }

    #[test]
    fn missing_tensor_is_reported() {
        let config = RunConfig { model: crate::config::ModelConfig { reduced_channels: 4, ..Default::default() }, ..Default::default() };
        let text = text_tensor(&config.to_text());
        let bytes = encode(CHECKPOINT_MAGIC, &[("config".into(), &text)]).unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes, Path::new("x")), Err(DsuError::MissingTensor(_))));
    }
}
