//! Parameter-free adaptation: rewrite the batch-norm running statistics
//! from target frames while leaving every weight untouched.

use crate::error::Result;
use crate::model::forward::backbone_on_geometry;
use crate::model::state::NetworkState;
use crate::nn::batchnorm::BnMode;
use crate::train::config::{BnAdaptConfig, BnAdaptMethod};
use crate::train::dataset::FrameSet;

#[derive(Debug, Clone, PartialEq)]
pub struct BnAdaptReport {
    pub batches_consumed: usize,
    /// Momentum trajectory actually applied (DUA) or the streaming-average
    /// weights (AdaBN).
    pub momenta: Vec<f64>,
}

/// AdaBN: one full pass over target, replacing each layer's running
/// statistics with the average of its per-frame batch statistics. Weighting
/// frame i by 1/i turns the momentum update into an exact streaming mean.
fn adapt_adabn(net: &mut NetworkState, target: &FrameSet) -> Result<BnAdaptReport> {
    let saved: Vec<f64> = net.bn.iter().map(|s| s.momentum).collect();
    let mut momenta = Vec::with_capacity(target.len());
    for (i, frame) in target.frames().iter().enumerate() {
        let m = 1.0 / (i as f64 + 1.0);
        for state in &mut net.bn {
            state.momentum = m;
        }
        momenta.push(m);
        backbone_on_geometry(net, &frame.geometry, frame.cloud.frame_id, BnMode::TrainUpdate)?;
    }
    for (state, m) in net.bn.iter_mut().zip(&saved) {
        state.momentum = *m;
    }
    Ok(BnAdaptReport { batches_consumed: target.len(), momenta })
}

/// DUA: stream target batches with a momentum that decays by omega per
/// batch down to the floor zeta, starting from the layer's configured
/// momentum.
fn adapt_dua(net: &mut NetworkState, target: &FrameSet, cfg: &BnAdaptConfig) -> Result<BnAdaptReport> {
    let saved: Vec<f64> = net.bn.iter().map(|s| s.momentum).collect();
    let mut momentum = saved[0];
    let mut momenta = Vec::with_capacity(cfg.batches);
    for b in 0..cfg.batches {
        let frame = &target.frames()[b % target.len()];
        momentum = (momentum * cfg.omega).max(cfg.zeta);
        for state in &mut net.bn {
            state.momentum = momentum;
        }
        momenta.push(momentum);
        backbone_on_geometry(net, &frame.geometry, frame.cloud.frame_id, BnMode::TrainUpdate)?;
    }
    for (state, m) in net.bn.iter_mut().zip(&saved) {
        state.momentum = *m;
    }
    Ok(BnAdaptReport { batches_consumed: cfg.batches.min(cfg.batches), momenta })
}

/// Adapt BN statistics in place. No-op (with a warning) on an empty target
/// split.
pub fn adapt_bn(
    net: &mut NetworkState,
    target: &FrameSet,
    cfg: &BnAdaptConfig,
) -> Result<BnAdaptReport> {
    cfg.validate()?;
    if target.is_empty() {
        log::warn!("adapt-bn: target split is empty, statistics left as-is");
        return Ok(BnAdaptReport { batches_consumed: 0, momenta: vec![] });
    }
    match cfg.method {
        BnAdaptMethod::Adabn => adapt_adabn(net, target),
        BnAdaptMethod::Dua => adapt_dua(net, target, cfg),
    }
}
