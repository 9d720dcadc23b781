//! AdamW with decoupled weight decay, cosine learning-rate decay, and the
//! exponential moving average used to maintain a teacher copy of the model.

use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNormState;
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

/// First/second moment estimates plus the step counter. One slot per
/// parameter tensor, in `ParamSet` order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// One AdamW step. Weight decay is applied directly to the parameters,
/// outside the moment estimates. If any gradient entry is non-finite the
/// step is rejected wholesale: parameters, moments, and the step counter all
/// stay untouched.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adamw: {} gradient tensors for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.at(i).shape() {
            return Err(Error::Dimension(format!(
                "adamw: gradient shape mismatch for '{}'",
                params.name_at(i)
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient for '{}' is not finite",
                params.name_at(i)
            )));
        }
    }

    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.at_mut(i).data_mut();
        for j in 0..p.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + state.epsilon)
                + lr * state.weight_decay * p[j];
        }
    }
    Ok(())
}

/// Learning-rate schedule over a fixed horizon of optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant { base: f64 },
    /// Half-cosine from `base` at step 0 down to 0 at `total` steps.
    Cosine { base: f64, total: u64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { base } => base,
            LrSchedule::Cosine { base, total } => {
                if total == 0 || step >= total {
                    return 0.0;
                }
                let frac = step as f64 / total as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// teacher <- alpha * teacher + (1 - alpha) * student, element-wise.
pub fn ema_update_params(teacher: &mut ParamSet, student: &ParamSet, alpha: f64) -> Result<()> {
    teacher.check_compatible(student)?;
    for i in 0..teacher.len() {
        let s = student.at(i).data();
        let t = teacher.at_mut(i).data_mut();
        for j in 0..t.len() {
            t[j] = alpha * t[j] + (1.0 - alpha) * s[j];
        }
    }
    Ok(())
}

/// Same blend for the batch-norm running statistics, which live outside the
/// parameter set but drift during training all the same.
pub fn ema_update_bn(
    teacher: &mut [BatchNormState],
    student: &[BatchNormState],
    alpha: f64,
) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::Dimension("ema: batch-norm layer count mismatch".into()));
    }
    for (t, s) in teacher.iter_mut().zip(student) {
        if t.features() != s.features() {
            return Err(Error::Dimension("ema: batch-norm width mismatch".into()));
        }
        for j in 0..t.running_mean.len() {
            t.running_mean[j] = alpha * t.running_mean[j] + (1.0 - alpha) * s.running_mean[j];
            t.running_var[j] = alpha * t.running_var[j] + (1.0 - alpha) * s.running_var[j];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![1], vec![value]).unwrap());
        p
    }

    #[test]
    fn first_adamw_step_matches_hand_computation() {
        let mut params = one_param(1.0);
        let mut state = OptimizerState::new(&params, 0.0);
        let grads = vec![Tensor::new(vec![1], vec![0.5]).unwrap()];
        adamw_step(&mut params, &grads, &mut state, 0.01).unwrap();
        // bias correction makes mhat = g, vhat = g^2 on step one
        let expected = 1.0 - 0.01 * (0.5 / (0.25f64.sqrt() + 1e-8));
        assert!((params.at(0).data()[0] - expected).abs() < 1e-15);
        assert_eq!(state.steps_taken(), 1);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut plain = one_param(1.0);
        let mut decayed = one_param(1.0);
        let mut s0 = OptimizerState::new(&plain, 0.0);
        let mut s1 = OptimizerState::new(&decayed, 0.01);
        let grads = vec![Tensor::new(vec![1], vec![0.5]).unwrap()];
        adamw_step(&mut plain, &grads, &mut s0, 0.01).unwrap();
        adamw_step(&mut decayed, &grads, &mut s1, 0.01).unwrap();
        let gap = plain.at(0).data()[0] - decayed.at(0).data()[0];
        // the decayed run subtracts exactly lr * wd * p on top
        assert!((gap - 0.01 * 0.01 * 1.0).abs() < 1e-15);
    }

    #[test]
    fn nonfinite_gradient_rejects_step_atomically() {
        let mut params = one_param(2.0);
        let mut state = OptimizerState::new(&params, 0.01);
        let grads = vec![Tensor::new(vec![1], vec![f64::NAN]).unwrap()];
        let err = adamw_step(&mut params, &grads, &mut state, 0.01).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(params.at(0).data()[0], 2.0);
        assert_eq!(state.steps_taken(), 0);
        assert_eq!(state.m[0].data()[0], 0.0);
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let s = LrSchedule::Cosine { base: 0.001, total: 1000 };
        assert_eq!(s.at(0), 0.001);
        assert!((s.at(500) - 0.0005).abs() < 1e-15);
        assert_eq!(s.at(1000), 0.0);
        assert!(s.at(250) > s.at(750));
    }

    #[test]
    fn ema_blends_params_and_bn() {
        let mut teacher = one_param(1.0);
        let student = one_param(0.0);
        ema_update_params(&mut teacher, &student, 0.9).unwrap();
        assert!((teacher.at(0).data()[0] - 0.9).abs() < 1e-15);

        let mut tbn = vec![BatchNormState::new(1)];
        let mut sbn = vec![BatchNormState::new(1)];
        sbn[0].running_mean[0] = 10.0;
        tbn[0].running_mean[0] = 0.0;
        ema_update_bn(&mut tbn, &sbn, 0.5).unwrap();
        assert!((tbn[0].running_mean[0] - 5.0).abs() < 1e-15);
    }
}
