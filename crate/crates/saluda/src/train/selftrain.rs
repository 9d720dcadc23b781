//! Stage-two self-training: an EMA teacher pseudo-labels target frames, a
//! student fine-tunes on source labels and confident pseudo-labels in
//! alternation, and the teacher trails the student after every step.

use crate::error::{Error, Result};
use crate::geom::cloud::Domain;
use crate::metrics::argmax_rows;
use crate::model::forward::{backbone_on_geometry, cls_forward};
use crate::model::state::NetworkState;
use crate::nn::batchnorm::BnMode;
use crate::nn::optim::{adamw_step, ema_update_bn, ema_update_params, LrSchedule, OptimizerState};
use crate::nn::tape::Tape;
use crate::seeds::derive;
use crate::train::config::{SelfTrainConfig, TrainConfig};
use crate::train::dataset::{FrameSet, PreparedFrame};
use crate::train::step1::{TraceRow, TrainReport};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::rc::Rc;

pub struct SelfTrainReport {
    pub train: TrainReport,
    /// Fraction of target points whose pseudo-label cleared the threshold.
    pub pseudo_label_rate: f64,
    /// Target steps dropped because no pseudo-label survived.
    pub skipped_target_steps: u64,
}

/// Teacher-confidence pseudo-labels for one frame: argmax where the top
/// probability clears the threshold, the ignore id elsewhere.
pub fn confident_pseudo_labels(
    teacher: &mut NetworkState,
    frame: &PreparedFrame,
    threshold: f64,
    ignore_id: u16,
) -> Result<Vec<u16>> {
    let latents = backbone_on_geometry(
        teacher,
        &frame.geometry,
        frame.cloud.frame_id,
        BnMode::EvalFrozen,
    )?;
    let probs = cls_forward(teacher, &latents)?;
    let classes = teacher.config.class_count;
    let arg = argmax_rows(&probs)?;
    Ok(arg
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if probs.data()[i * classes + c as usize] >= threshold {
                c
            } else {
                ignore_id
            }
        })
        .collect())
}

/// One cross-entropy optimizer step on the student.
fn ce_step(
    student: &mut NetworkState,
    frame: &PreparedFrame,
    labels: Rc<Vec<u16>>,
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    lr: f64,
    bn_mode: BnMode,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (grads, l_sem) = {
        let mut bound = student.bind(&mut tape);
        let latents = bound.backbone(
            &mut tape,
            &frame.geometry.features,
            &frame.geometry.adjacency,
            bn_mode,
        )?;
        let logits = bound.cls_logits(&mut tape, latents)?;
        let sem = tape.softmax_cross_entropy(logits, labels, cfg.ignore_id)?;
        let value = tape.value(sem).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("self-training loss".into()));
        }
        let mut grads = tape.backward(sem)?;
        (bound.grads_in_order(&mut grads), value)
    };
    adamw_step(&mut student.params, &grads, opt, lr)?;
    Ok(l_sem)
}

/// Self-train with a custom pseudo-labeler (the production one is
/// [`confident_pseudo_labels`]); returns the student.
pub fn self_train_with<L>(
    init: &NetworkState,
    source: &FrameSet,
    target: &FrameSet,
    st: &SelfTrainConfig,
    tc: &TrainConfig,
    global_seed: u64,
    mut labeler: L,
) -> Result<(NetworkState, SelfTrainReport)>
where
    L: FnMut(&mut NetworkState, &PreparedFrame) -> Result<Vec<u16>>,
{
    st.validate()?;
    tc.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config("self-training needs source and target frames".into()));
    }

    let mut student = init.clone();
    let mut teacher = init.clone();
    let seed = st.resolved_seed(global_seed);
    let mut source_order = ChaCha20Rng::seed_from_u64(derive(seed, "selftrain/source-order"));

    let total = st.epochs * target.len() as u64 * 2;
    let schedule = LrSchedule::Cosine { base: tc.base_lr, total };
    let bn_mode = if tc.bn_frozen { BnMode::EvalFrozen } else { BnMode::TrainUpdate };
    let mut opt = OptimizerState::new(&student.params, tc.weight_decay);

    let mut trace = Vec::with_capacity(total as usize);
    let mut optimizer_steps = 0;
    let mut skipped = 0;
    let mut confident_points = 0u64;
    let mut total_points = 0u64;
    let mut it = 0;
    for _epoch in 0..st.epochs {
        for t_idx in 0..target.len() {
            // source step keeps the student anchored
            it += 1;
            let lr = schedule.at(it - 1);
            let frame = &source.frames()[source_order.gen_range(0..source.len())];
            let labels = frame.labels.clone().ok_or_else(|| {
                Error::Data(format!("source frame {} has no labels", frame.cloud.frame_id))
            })?;
            let l_sem = ce_step(&mut student, frame, labels, tc, &mut opt, lr, bn_mode)?;
            optimizer_steps += 1;
            ema_update_params(&mut teacher.params, &student.params, st.ema_decay)?;
            ema_update_bn(&mut teacher.bn, &student.bn, st.ema_decay)?;
            trace.push(TraceRow {
                iteration: it,
                domain: Domain::Source,
                l_sem: Some(l_sem),
                l_occ: None,
                lr,
            });

            // target step on whatever pseudo-labels survive
            it += 1;
            let lr = schedule.at(it - 1);
            let frame = &target.frames()[t_idx];
            let pseudo = labeler(&mut teacher, frame)?;
            if pseudo.len() != frame.cloud.len() {
                return Err(Error::Dimension(format!(
                    "{} pseudo-labels for {} points",
                    pseudo.len(),
                    frame.cloud.len()
                )));
            }
            total_points += pseudo.len() as u64;
            let confident = pseudo.iter().filter(|&&l| l != cfg_ignore(tc)).count() as u64;
            confident_points += confident;
            let mut row =
                TraceRow { iteration: it, domain: Domain::Target, l_sem: None, l_occ: None, lr };
            if confident == 0 {
                skipped += 1;
            } else {
                let l_sem =
                    ce_step(&mut student, frame, Rc::new(pseudo), tc, &mut opt, lr, bn_mode)?;
                optimizer_steps += 1;
                ema_update_params(&mut teacher.params, &student.params, st.ema_decay)?;
                ema_update_bn(&mut teacher.bn, &student.bn, st.ema_decay)?;
                row.l_sem = Some(l_sem);
            }
            trace.push(row);
        }
    }
    let report = SelfTrainReport {
        train: TrainReport { trace, optimizer_steps },
        pseudo_label_rate: if total_points > 0 {
            confident_points as f64 / total_points as f64
        } else {
            0.0
        },
        skipped_target_steps: skipped,
    };
    Ok((student, report))
}

fn cfg_ignore(tc: &TrainConfig) -> u16 {
    tc.ignore_id
}

/// Production entry point: teacher-confidence pseudo-labels.
pub fn self_train(
    init: &NetworkState,
    source: &FrameSet,
    target: &FrameSet,
    st: &SelfTrainConfig,
    tc: &TrainConfig,
    global_seed: u64,
) -> Result<(NetworkState, SelfTrainReport)> {
    let threshold = st.confidence_threshold;
    let ignore = tc.ignore_id;
    self_train_with(init, source, target, st, tc, global_seed, |teacher, frame| {
        confident_pseudo_labels(teacher, frame, threshold, ignore)
    })
}
