//! Stage-one trainer: alternating source/target iterations on one shared
//! clock, cross entropy on labeled source frames, and (depending on mode)
//! the surface occupancy loss on both domains or entropy minimization on
//! target.

use crate::error::{Error, Result};
use crate::geom::cloud::Domain;
use crate::model::forward::gather_support;
use crate::model::state::NetworkState;
use crate::nn::batchnorm::BnMode;
use crate::nn::optim::{adamw_step, LrSchedule, OptimizerState};
use crate::nn::tape::Tape;
use crate::queries::sample_visibility_queries;
use crate::seeds::{derive, derive_n};
use crate::train::config::{TrainConfig, TrainMode};
use crate::train::dataset::{FrameSet, PreparedFrame};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub domain: Domain,
    /// Cross entropy on source iterations; mean prediction entropy on
    /// min-ent target iterations; empty when the iteration had no
    /// semantic-head loss.
    pub l_sem: Option<f64>,
    /// Unweighted occupancy BCE, when computed.
    pub l_occ: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub optimizer_steps: u64,
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iteration,domain,l_sem,l_occ,lr\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration,
            r.domain,
            cell(r.l_sem),
            cell(r.l_occ),
            r.lr
        ));
    }
    out
}

fn effective_lambda(cfg: &TrainConfig) -> f64 {
    match cfg.mode {
        TrainMode::Saluda => cfg.lambda,
        _ => 0.0,
    }
}

fn effective_ent_weight(cfg: &TrainConfig) -> f64 {
    match cfg.mode {
        TrainMode::MinEnt => cfg.min_ent_weight,
        _ => 0.0,
    }
}

/// Does this mode forward target frames at all?
fn forwards_target(mode: TrainMode) -> bool {
    mode != TrainMode::SourceOnly
}

/// One optimizer step on the semantic head: backbone, class logits, cross
/// entropy, optionally plus the weighted occupancy loss.
struct StepOutcome {
    l_sem: Option<f64>,
    l_occ: Option<f64>,
    stepped: bool,
}

#[allow(clippy::too_many_arguments)]
fn source_iteration(
    net: &mut NetworkState,
    frame: &PreparedFrame,
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    lr: f64,
    bn_mode: BnMode,
    query_seed: u64,
    iteration: u64,
) -> Result<StepOutcome> {
    let lambda = effective_lambda(cfg);
    let labels = frame
        .labels
        .clone()
        .ok_or_else(|| Error::Data(format!("source frame {} has no labels", frame.cloud.frame_id)))?;
    let mut tape = Tape::new();
    let (grads, l_sem, l_occ) = {
        let mut bound = net.bind(&mut tape);
        let latents =
            bound.backbone(&mut tape, &frame.geometry.features, &frame.geometry.adjacency, bn_mode)?;
        let logits = bound.cls_logits(&mut tape, latents)?;
        let sem = tape.softmax_cross_entropy(logits, labels, cfg.ignore_id)?;
        let (loss, l_occ) = if lambda > 0.0 {
            let queries = sample_visibility_queries(
                &frame.cloud,
                cfg.delta,
                query_seed,
                cfg.anchors_per_frame,
            )?;
            let batch = gather_support(
                &frame.geometry.positions,
                &frame.geometry.index,
                &queries,
                cfg.ball_radius,
            )?;
            let occ_logits = bound.surf_logits(&mut tape, latents, &batch)?;
            let occ = tape.sigmoid_bce(occ_logits, Rc::new(batch.targets.clone()))?;
            let weighted = tape.scale(occ, lambda);
            (tape.add(sem, weighted)?, Some(tape.value(occ).item()))
        } else {
            (sem, None)
        };
        let l_sem = tape.value(sem).item();
        let total = tape.value(loss).item();
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {iteration}")));
        }
        let mut grads = tape.backward(loss)?;
        (bound.grads_in_order(&mut grads), l_sem, l_occ)
    };
    adamw_step(&mut net.params, &grads, opt, lr)?;
    Ok(StepOutcome { l_sem: Some(l_sem), l_occ, stepped: true })
}

#[allow(clippy::too_many_arguments)]
fn target_iteration(
    net: &mut NetworkState,
    frame: &PreparedFrame,
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    lr: f64,
    bn_mode: BnMode,
    query_seed: u64,
    iteration: u64,
) -> Result<StepOutcome> {
    let lambda = effective_lambda(cfg);
    let ent_weight = effective_ent_weight(cfg);
    let mut tape = Tape::new();
    let (grads, l_sem, l_occ) = {
        let mut bound = net.bind(&mut tape);
        let latents =
            bound.backbone(&mut tape, &frame.geometry.features, &frame.geometry.adjacency, bn_mode)?;
        if lambda > 0.0 {
            let queries = sample_visibility_queries(
                &frame.cloud,
                cfg.delta,
                query_seed,
                cfg.anchors_per_frame,
            )?;
            let batch = gather_support(
                &frame.geometry.positions,
                &frame.geometry.index,
                &queries,
                cfg.ball_radius,
            )?;
            let occ_logits = bound.surf_logits(&mut tape, latents, &batch)?;
            let occ = tape.sigmoid_bce(occ_logits, Rc::new(batch.targets.clone()))?;
            let loss = tape.scale(occ, lambda);
            let l_occ = tape.value(occ).item();
            if !l_occ.is_finite() {
                return Err(Error::NonFinite(format!("occupancy loss at iteration {iteration}")));
            }
            let mut grads = tape.backward(loss)?;
            (bound.grads_in_order(&mut grads), None, Some(l_occ))
        } else if ent_weight > 0.0 {
            let logits = bound.cls_logits(&mut tape, latents)?;
            let ent = tape.mean_entropy(logits)?;
            let loss = tape.scale(ent, ent_weight);
            let l_ent = tape.value(ent).item();
            if !l_ent.is_finite() {
                return Err(Error::NonFinite(format!("entropy loss at iteration {iteration}")));
            }
            let mut grads = tape.backward(loss)?;
            (bound.grads_in_order(&mut grads), Some(l_ent), None)
        } else {
            // forward only: the pass itself is the point (BN statistics),
            // nothing reaches the optimizer
            return Ok(StepOutcome { l_sem: None, l_occ: None, stepped: false });
        }
    };
    adamw_step(&mut net.params, &grads, opt, lr)?;
    Ok(StepOutcome { l_sem, l_occ, stepped: true })
}

/// Run the stage-one loop, invoking `on_checkpoint` per the config's
/// checkpoint cadence.
pub fn train_step1_with<F>(
    source: &FrameSet,
    target: &FrameSet,
    cfg: &TrainConfig,
    net: &mut NetworkState,
    global_seed: u64,
    mut on_checkpoint: F,
) -> Result<TrainReport>
where
    F: FnMut(u64, &NetworkState) -> Result<()>,
{
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Config("source split is empty".into()));
    }
    let target_needed = forwards_target(cfg.mode)
        && (cfg.mode != TrainMode::Saluda || effective_lambda(cfg) > 0.0);
    if target.is_empty() && target_needed {
        return Err(Error::Config(format!("{:?} training needs target frames", cfg.mode)));
    }

    let seed = cfg.resolved_seed(global_seed);
    let mut source_order = ChaCha20Rng::seed_from_u64(derive(seed, "train/source-order"));
    let mut target_order = ChaCha20Rng::seed_from_u64(derive(seed, "train/target-order"));
    let query_base = derive(seed, "train/queries");

    let mut opt = OptimizerState::new(&net.params, cfg.weight_decay);
    let schedule = LrSchedule::Cosine { base: cfg.base_lr, total: cfg.total_iterations };
    let bn_mode = if cfg.bn_frozen { BnMode::EvalFrozen } else { BnMode::TrainUpdate };

    let mut trace = Vec::with_capacity(cfg.total_iterations as usize);
    let mut optimizer_steps = 0;
    for it in 1..=cfg.total_iterations {
        let lr = schedule.at(it - 1);
        let outcome = if it % 2 == 1 {
            let frame = &source.frames()[source_order.gen_range(0..source.len())];
            source_iteration(net, frame, cfg, &mut opt, lr, bn_mode, derive_n(query_base, "source", it), it)?
        } else if forwards_target(cfg.mode) && !target.is_empty() {
            let frame = &target.frames()[target_order.gen_range(0..target.len())];
            target_iteration(net, frame, cfg, &mut opt, lr, bn_mode, derive_n(query_base, "target", it), it)?
        } else {
            StepOutcome { l_sem: None, l_occ: None, stepped: false }
        };
        optimizer_steps += outcome.stepped as u64;
        trace.push(TraceRow {
            iteration: it,
            domain: if it % 2 == 1 { Domain::Source } else { Domain::Target },
            l_sem: outcome.l_sem,
            l_occ: outcome.l_occ,
            lr,
        });
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            on_checkpoint(it, net)?;
        }
    }
    Ok(TrainReport { trace, optimizer_steps })
}

pub fn train_step1(
    source: &FrameSet,
    target: &FrameSet,
    cfg: &TrainConfig,
    net: &mut NetworkState,
    global_seed: u64,
) -> Result<TrainReport> {
    train_step1_with(source, target, cfg, net, global_seed, |_, _| Ok(()))
}

pub fn train_source_only(
    source: &FrameSet,
    cfg: &TrainConfig,
    net: &mut NetworkState,
    global_seed: u64,
) -> Result<TrainReport> {
    let cfg = TrainConfig { mode: TrainMode::SourceOnly, ..cfg.clone() };
    let target = FrameSet::empty(0.1);
    train_step1(source, &target, &cfg, net, global_seed)
}

pub fn train_mixed_bn(
    source: &FrameSet,
    target: &FrameSet,
    cfg: &TrainConfig,
    net: &mut NetworkState,
    global_seed: u64,
) -> Result<TrainReport> {
    let cfg = TrainConfig { mode: TrainMode::MixedBn, ..cfg.clone() };
    train_step1(source, target, &cfg, net, global_seed)
}

pub fn train_min_ent(
    source: &FrameSet,
    target: &FrameSet,
    cfg: &TrainConfig,
    net: &mut NetworkState,
    global_seed: u64,
) -> Result<TrainReport> {
    let cfg = TrainConfig { mode: TrainMode::MinEnt, ..cfg.clone() };
    train_step1(source, target, &cfg, net, global_seed)
}
