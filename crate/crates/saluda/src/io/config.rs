//! One experiment config drives every subcommand. JSON on disk, strict
//! about unknown keys, with dotted-path `--set` overrides and a
//! `SALUDA_SEED` environment escape hatch.

use crate::error::{Error, Result};
use crate::io::kitti::ClassMap;
use crate::metrics::EvalOptions;
use crate::model::state::ModelConfig;
use crate::sim::scan::LidarModel;
use crate::sim::scene_gen::SceneSpec;
use crate::train::config::{BnAdaptConfig, SelfTrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    /// Directories of `.slpc` frames, one per split.
    pub source_train: PathBuf,
    pub source_val: PathBuf,
    pub target_train: PathBuf,
    pub target_eval: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            source_train: "data/source_train".into(),
            source_val: "data/source_val".into(),
            target_train: "data/target_train".into(),
            target_eval: "data/target_eval".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub scene: SceneSpec,
    pub source_lidar: LidarModel,
    pub target_lidar: LidarModel,
    pub source_train_frames: u64,
    pub source_val_frames: u64,
    pub target_train_frames: u64,
    pub target_eval_frames: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            scene: crate::benchmark::default_scene_spec(),
            source_lidar: crate::benchmark::source_lidar(),
            target_lidar: crate::benchmark::target_lidar(),
            source_train_frames: crate::benchmark::SOURCE_TRAIN_FRAMES,
            source_val_frames: crate::benchmark::SOURCE_VAL_FRAMES,
            target_train_frames: crate::benchmark::TARGET_TRAIN_FRAMES,
            target_eval_frames: crate::benchmark::TARGET_EVAL_FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub voxel_size: f64,
    pub data: DataPaths,
    pub simulate: SimulateConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub self_train: SelfTrainConfig,
    pub bn_adapt: BnAdaptConfig,
    pub classes: ClassMap,
    pub eval: EvalOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let classes = ClassMap::synthetic();
        let model = ModelConfig { class_count: classes.class_count(), ..ModelConfig::default() };
        ExperimentConfig {
            seed: 42,
            output_dir: "out".into(),
            voxel_size: crate::benchmark::BENCH_VOXEL_SIZE,
            data: DataPaths::default(),
            simulate: SimulateConfig::default(),
            model,
            train: TrainConfig {
                ignore_id: classes.ignore_id,
                // benchmark scale: enough anchors and iterations to adapt,
                // small enough for single-core turnaround
                anchors_per_frame: 64,
                total_iterations: 240,
                ..TrainConfig::default()
            },
            self_train: SelfTrainConfig::default(),
            bn_adapt: BnAdaptConfig::default(),
            classes,
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config("voxel_size must be > 0".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.self_train.validate()?;
        self.bn_adapt.validate()?;
        self.classes.validate()?;
        self.eval.validate()?;
        if self.model.class_count != self.classes.class_count() {
            return Err(Error::Config(format!(
                "model.class_count {} disagrees with the {} named classes",
                self.model.class_count,
                self.classes.class_count()
            )));
        }
        if self.train.ignore_id != self.classes.ignore_id {
            return Err(Error::Config(
                "train.ignore_id disagrees with classes.ignore_id".into(),
            ));
        }
        Ok(())
    }
}

/// Apply one `key.path=value` override to a JSON tree. Values parse as JSON
/// when possible (numbers, booleans, arrays) and fall back to strings.
fn apply_set(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set needs key=value, got '{spec}'")))?;
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("--set path '{path}' has an empty segment")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set path '{path}' descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    unreachable!("split never yields zero parts")
}

/// Load, override, and validate an experiment config. `path = None` starts
/// from the built-in defaults. A parseable `SALUDA_SEED` environment
/// variable overrides the seed last.
pub fn load_experiment(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut tree: serde_json::Value = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => serde_json::to_value(ExperimentConfig::default())?,
    };
    for spec in sets {
        apply_set(&mut tree, spec)?;
    }
    let mut config: ExperimentConfig = serde_json::from_value(tree)?;
    if let Ok(seed) = std::env::var("SALUDA_SEED") {
        config.seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("SALUDA_SEED must be a u64, got '{seed}'")))?;
    }
    config.validate()?;
    Ok(config)
}
