use crate::error::{Error, Result};
use crate::queries::{DEFAULT_ANCHORS_PER_FRAME, DEFAULT_DELTA};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Cross entropy on source frames, target ignored entirely.
    SourceOnly,
    /// Cross entropy on source plus the weighted occupancy loss on both
    /// domains.
    Saluda,
    /// Like source-only, except target frames still flow through the
    /// network so their batches update running BN statistics.
    MixedBn,
    /// Mixed BN plus weighted prediction-entropy minimization on target.
    MinEnt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Occupancy loss weight (only effective in saluda mode).
    pub lambda: f64,
    /// Entropy loss weight (only effective in min_ent mode).
    pub min_ent_weight: f64,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Shared iteration clock: odd iterations draw a source frame, even
    /// iterations a target frame.
    pub total_iterations: u64,
    /// Query offset scale delta (m).
    pub delta: f64,
    /// Support ball radius (m) around occupancy queries.
    pub ball_radius: f64,
    pub anchors_per_frame: usize,
    pub ignore_id: u16,
    /// Keep running BN statistics frozen (normalize with stored stats even
    /// while training).
    pub bn_frozen: bool,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
    /// None defers to the global experiment seed.
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Saluda,
            lambda: 1e-2,
            min_ent_weight: 0.0,
            base_lr: 1e-3,
            weight_decay: 1e-2,
            total_iterations: 400,
            delta: DEFAULT_DELTA,
            ball_radius: 1.0,
            anchors_per_frame: DEFAULT_ANCHORS_PER_FRAME,
            ignore_id: u16::MAX,
            bn_frozen: false,
            checkpoint_every: 0,
            seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !self.min_ent_weight.is_finite() || self.min_ent_weight < 0.0 {
            return Err(Error::Config("min_ent_weight must be >= 0".into()));
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("base_lr must be > 0 and weight_decay >= 0".into()));
        }
        if self.total_iterations == 0 {
            return Err(Error::Config("total_iterations must be >= 1".into()));
        }
        if !(self.delta > 0.0) || !(self.ball_radius > 0.0) {
            return Err(Error::Config("delta and ball_radius must be > 0".into()));
        }
        if self.anchors_per_frame == 0 {
            return Err(Error::Config("anchors_per_frame must be >= 1".into()));
        }
        Ok(())
    }

    pub fn resolved_seed(&self, global: u64) -> u64 {
        self.seed.unwrap_or(global)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainConfig {
    /// Passes over the target split; source steps interleave one-to-one.
    pub epochs: u64,
    /// Teacher retention: teacher <- alpha * teacher + (1 - alpha) * student.
    pub ema_decay: f64,
    /// Minimum teacher probability for a pseudo-label to survive.
    pub confidence_threshold: f64,
    pub seed: Option<u64>,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig { epochs: 3, ema_decay: 0.999, confidence_threshold: 0.9, seed: None }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config("confidence_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn resolved_seed(&self, global: u64) -> u64 {
        self.seed.unwrap_or(global)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnAdaptMethod {
    /// Replace running statistics with the average batch statistics over
    /// full passes on target.
    Adabn,
    /// Stream target batches through with a decaying update momentum.
    Dua,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnAdaptConfig {
    pub method: BnAdaptMethod,
    /// DUA momentum decay factor per consumed batch.
    pub omega: f64,
    /// DUA momentum floor.
    pub zeta: f64,
    /// DUA: how many target batches to consume (cycling if needed).
    pub batches: usize,
}

impl Default for BnAdaptConfig {
    fn default() -> Self {
        BnAdaptConfig { method: BnAdaptMethod::Adabn, omega: 0.89, zeta: 0.0, batches: 40 }
    }
}

impl BnAdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Config("omega must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::Config("zeta must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
