//! Batch normalization running statistics.

use serde::{Deserialize, Serialize};

/// Whether a forward pass normalizes by batch statistics (and folds them
/// into the running estimates) or by the frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    TrainUpdate,
    EvalFrozen,
}

/// Per-layer running statistics. In `EvalFrozen` mode a forward pass never
/// mutates them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    /// Fresh state: zero mean, unit variance.
    pub fn new(features: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// run <- (1 - m) * run + m * batch
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_converges_geometrically() {
        let mut st = BatchNormState::new(1);
        let target_mean = [3.0];
        let target_var = [4.0];
        let mut errs = Vec::new();
        for _ in 0..3 {
            st.update(&target_mean, &target_var);
            errs.push((st.running_mean[0] - 3.0).abs());
        }
        // error shrinks by exactly (1 - momentum) per pass
        assert!((errs[1] / errs[0] - 0.9).abs() < 1e-12);
        assert!((errs[2] / errs[1] - 0.9).abs() < 1e-12);
    }
}
