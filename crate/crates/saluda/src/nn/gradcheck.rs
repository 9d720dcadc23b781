//! Central-difference verification of analytic gradients. Used by tests to
//! pin every backward formula against a numeric oracle.

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameter name and flat element index of the worst disagreement.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare `analytic` (one tensor per parameter, in set order) against
/// central differences of `f`. The relative error of a pair (a, n) is
/// |a - n| / max(|a|, |n|, 1e-6), so near-zero gradients are compared
/// absolutely.
pub fn grad_check<F>(
    params: &ParamSet,
    analytic: &[Tensor],
    h: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!(
            "grad_check: {} analytic tensors for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, worst: None };
    for i in 0..params.len() {
        if analytic[i].shape() != params.at(i).shape() {
            return Err(Error::Dimension(format!(
                "grad_check: analytic shape mismatch for '{}'",
                params.name_at(i)
            )));
        }
        for j in 0..params.at(i).numel() {
            let orig = params.at(i).data()[j];
            probe.at_mut(i).data_mut()[j] = orig + h;
            let plus = f(&probe)?;
            probe.at_mut(i).data_mut()[j] = orig - h;
            let minus = f(&probe)?;
            probe.at_mut(i).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((params.name_at(i).to_string(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_set() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        p
    }

    fn quadratic(p: &ParamSet) -> Result<f64> {
        Ok(p.at(0).data().iter().map(|v| v * v).sum())
    }

    #[test]
    fn accepts_correct_gradient() {
        let params = quadratic_set();
        let analytic = vec![Tensor::new(vec![3], vec![2.0, -4.0, 1.0]).unwrap()];
        let rep = grad_check(&params, &analytic, 1e-5, quadratic).unwrap();
        assert!(rep.ok(1e-7), "max rel err {}", rep.max_rel_err);
        assert_eq!(rep.checked, 3);
    }

    #[test]
    fn flags_wrong_gradient_with_location() {
        let params = quadratic_set();
        let analytic = vec![Tensor::new(vec![3], vec![2.0, 4.0, 1.0]).unwrap()];
        let rep = grad_check(&params, &analytic, 1e-5, quadratic).unwrap();
        assert!(!rep.ok(1e-4));
        assert_eq!(rep.worst, Some(("w".to_string(), 1)));
    }
}
