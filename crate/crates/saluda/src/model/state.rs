//! Network architecture description, parameter storage, initialization, and
//! checkpointing.

use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNormState;
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Latent width d of the per-point code shared by both heads.
    pub latent_dim: usize,
    pub class_count: usize,
    pub block_widths: Vec<usize>,
    /// Ball-pooling radius (m) per aggregation block.
    pub block_radii: Vec<f64>,
    pub surf_hidden: usize,
    pub surf_value_dim: usize,
    /// Support ball (m) around each occupancy query.
    pub surf_radius: f64,
    /// Ball (m) for the log-density input feature.
    pub density_radius: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 32,
            class_count: 6,
            block_widths: vec![32, 32, 32],
            block_radii: vec![0.5, 1.0, 2.0],
            surf_hidden: 32,
            surf_value_dim: 32,
            surf_radius: 1.0,
            density_radius: 1.0,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_widths.is_empty() || self.block_widths.len() != self.block_radii.len() {
            return Err(Error::Config(
                "block_widths and block_radii must be equal-length and non-empty".into(),
            ));
        }
        if self.block_radii.iter().any(|&r| r <= 0.0)
            || self.surf_radius <= 0.0
            || self.density_radius <= 0.0
        {
            return Err(Error::Config("all radii must be positive".into()));
        }
        if self.latent_dim == 0
            || self.class_count < 2
            || self.surf_hidden == 0
            || self.surf_value_dim == 0
        {
            return Err(Error::Config("layer widths must be positive; need >= 2 classes".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_epsilon <= 0.0 {
            return Err(Error::Config("bad batch-norm constants".into()));
        }
        Ok(())
    }

    /// (name, rows, cols) for every weight; biases/gamma/beta follow from it.
    fn layer_dims(&self) -> Vec<(String, usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = 3; // height, log density, constant
        for (i, &w) in self.block_widths.iter().enumerate() {
            dims.push((format!("block{i}"), fan_in, w));
            fan_in = w;
        }
        dims.push(("latent".into(), fan_in, self.latent_dim));
        dims.push(("cls".into(), self.latent_dim, self.class_count));
        dims.push(("surf.mlp0".into(), self.latent_dim + 3, self.surf_hidden));
        dims.push(("surf.mlp1".into(), self.surf_hidden, self.surf_hidden));
        dims.push(("surf.value".into(), self.surf_hidden, self.surf_value_dim));
        dims.push(("surf.score".into(), self.surf_hidden, 1));
        dims.push(("surf.out".into(), self.surf_value_dim, 1));
        dims
    }
}

#[derive(Debug, Clone)]
pub struct NetworkState {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// One running-statistics record per aggregation block.
    pub bn: Vec<BatchNormState>,
}

impl NetworkState {
    /// Fresh parameters: weights uniform in ±1/sqrt(fan_in), biases zero,
    /// batch-norm scale 1 / shift 0. Deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, fan_in, fan_out) in config.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.insert(
                &format!("{name}.w"),
                Tensor::uniform(vec![fan_in, fan_out], bound, &mut rng),
            );
            params.insert(&format!("{name}.b"), Tensor::zeros(vec![fan_out]));
            if name.starts_with("block") {
                params.insert(&format!("{name}.gamma"), Tensor::full(vec![fan_out], 1.0));
                params.insert(&format!("{name}.beta"), Tensor::zeros(vec![fan_out]));
            }
        }
        let mut bn = Vec::new();
        for &w in &config.block_widths {
            let mut state = BatchNormState::new(w);
            state.momentum = config.bn_momentum;
            state.epsilon = config.bn_epsilon;
            bn.push(state);
        }
        Ok(NetworkState { config, params, bn })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor)> = vec![
            ("meta.latent_dim".into(), Tensor::scalar(self.config.latent_dim as f64)),
            ("meta.class_count".into(), Tensor::scalar(self.config.class_count as f64)),
            (
                "meta.block_widths".into(),
                Tensor::new(
                    vec![self.config.block_widths.len()],
                    self.config.block_widths.iter().map(|&w| w as f64).collect(),
                )?,
            ),
            (
                "meta.block_radii".into(),
                Tensor::new(vec![self.config.block_radii.len()], self.config.block_radii.clone())?,
            ),
            (
                "meta.surf".into(),
                Tensor::new(
                    vec![3],
                    vec![
                        self.config.surf_hidden as f64,
                        self.config.surf_value_dim as f64,
                        self.config.surf_radius,
                    ],
                )?,
            ),
            ("meta.density_radius".into(), Tensor::scalar(self.config.density_radius)),
            (
                "meta.bn".into(),
                Tensor::new(vec![2], vec![self.config.bn_momentum, self.config.bn_epsilon])?,
            ),
        ];
        for (i, state) in self.bn.iter().enumerate() {
            entries.push((
                format!("bn{i}.running_mean"),
                Tensor::new(vec![state.features()], state.running_mean.clone())?,
            ));
            entries.push((
                format!("bn{i}.running_var"),
                Tensor::new(vec![state.features()], state.running_var.clone())?,
            ));
        }
        for (name, tensor) in self.params.iter() {
            entries.push((name.to_string(), tensor.clone()));
        }
        save_checkpoint(path, entries.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = load_checkpoint(path)?;
        let mut map: std::collections::HashMap<String, Tensor> = entries.into_iter().collect();
        let mut take = |name: &str| -> Result<Tensor> {
            map.remove(name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing '{name}'")))
        };
        let widths = take("meta.block_widths")?;
        let radii = take("meta.block_radii")?;
        let surf = take("meta.surf")?;
        let bn_consts = take("meta.bn")?;
        let config = ModelConfig {
            latent_dim: take("meta.latent_dim")?.item() as usize,
            class_count: take("meta.class_count")?.item() as usize,
            block_widths: widths.data().iter().map(|&w| w as usize).collect(),
            block_radii: radii.data().to_vec(),
            surf_hidden: surf.data()[0] as usize,
            surf_value_dim: surf.data()[1] as usize,
            surf_radius: surf.data()[2],
            density_radius: take("meta.density_radius")?.item(),
            bn_momentum: bn_consts.data()[0],
            bn_epsilon: bn_consts.data()[1],
        };
        config.validate()?;
        let mut template = NetworkState::init(config, 0)?;
        for i in 0..template.params.len() {
            let name = template.params.name_at(i).to_string();
            let loaded = map
                .remove(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing parameter '{name}'")))?;
            if loaded.shape() != template.params.at(i).shape() {
                return Err(Error::Data(format!(
                    "checkpoint shape mismatch for '{name}': {:?} vs {:?}",
                    loaded.shape(),
                    template.params.at(i).shape()
                )));
            }
            *template.params.at_mut(i) = loaded;
        }
        for (i, state) in template.bn.iter_mut().enumerate() {
            let mean = map
                .remove(&format!("bn{i}.running_mean"))
                .ok_or_else(|| Error::Data(format!("checkpoint is missing bn{i} stats")))?;
            let var = map
                .remove(&format!("bn{i}.running_var"))
                .ok_or_else(|| Error::Data(format!("checkpoint is missing bn{i} stats")))?;
            if mean.numel() != state.features() || var.numel() != state.features() {
                return Err(Error::Data(format!("bn{i} statistics have the wrong width")));
            }
            state.running_mean = mean.data().to_vec();
            state.running_var = var.data().to_vec();
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::Data(format!("checkpoint has unexpected tensor '{extra}'")));
        }
        Ok(template)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_nontrivial() {
        let a = NetworkState::init(ModelConfig::default(), 7).unwrap();
        let b = NetworkState::init(ModelConfig::default(), 7).unwrap();
        let c = NetworkState::init(ModelConfig::default(), 8).unwrap();
        assert_eq!(a.params.at(0).data(), b.params.at(0).data());
        assert_ne!(a.params.at(0).data(), c.params.at(0).data());
        assert!(a.params.at(0).data().iter().any(|&v| v != 0.0));
        assert_eq!(a.bn.len(), 3);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.block_radii.pop();
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { class_count: 1, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { surf_radius: -1.0, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.salw");
        let mut net = NetworkState::init(ModelConfig::default(), 3).unwrap();
        net.bn[1].running_mean[4] = 0.25;
        net.bn[1].running_var[4] = 2.5;
        net.save(&path).unwrap();
        let back = NetworkState::load(&path).unwrap();
        assert_eq!(back.config, net.config);
        for i in 0..net.params.len() {
            assert_eq!(back.params.at(i).data(), net.params.at(i).data());
        }
        assert_eq!(back.bn[1].running_mean, net.bn[1].running_mean);
        assert_eq!(back.bn[1].running_var, net.bn[1].running_var);
    }

    #[test]
    fn load_rejects_missing_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.salw");
        let net = NetworkState::init(ModelConfig::default(), 3).unwrap();
        net.save(&path).unwrap();
        // rewrite the checkpoint without the cls weights
        let entries = crate::nn::checkpoint::load_checkpoint(&path).unwrap();
        let filtered: Vec<_> = entries.into_iter().filter(|(n, _)| n != "cls.w").collect();
        crate::nn::checkpoint::save_checkpoint(
            &path,
            filtered.iter().map(|(n, t)| (n.as_str(), t)),
        )
        .unwrap();
        let err = NetworkState::load(&path).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
