//! Wengert tape: reverse-mode AD via operation recording.
//!
//! The forward pass records each op with its saved intermediates; `backward`
//! replays the tape in reverse and accumulates exact gradients. The op set is
//! exactly what the point encoder and its heads need: dense affine maps,
//! ReLU, batch norm in both statistics modes, neighborhood mean pooling over
//! a fixed adjacency, row gathering with appended constants, segmented
//! softmax-weighted pooling, and fused scalar losses.

use crate::error::{Error, Result};
use crate::nn::batchnorm::{BatchNormState, BnMode};
use crate::nn::tensor::Tensor;
use std::rc::Rc;

/// Compressed sparse rows: `targets[offsets[i]..offsets[i+1]]` are the
/// neighbors of row `i`.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub offsets: Vec<u32>,
    pub targets: Vec<u32>,
}

impl Csr {
    pub fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    BnTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        invstd: Vec<f64>,
    },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        invstd: Vec<f64>,
    },
    /// out[i] = mean of x rows listed in adj.neighbors(i). The adjacency must
    /// be symmetric (i in adj[j] iff j in adj[i]), which holds for
    /// fixed-radius balls.
    BallMean {
        x: Var,
        adj: Rc<Csr>,
    },
    /// Row r of the output is [x[idx[r]] ; extra[r]].
    GatherConcat {
        x: Var,
        idx: Rc<Vec<u32>>,
        extra_cols: usize,
    },
    /// Per segment q: w = softmax(scores), out[q] = sum_r w_r * values[r].
    SegmentPool {
        values: Var,
        scores: Var,
        segs: Rc<Vec<u32>>,
        weights: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        labels: Rc<Vec<u16>>,
        ignore_id: u16,
        probs: Vec<f64>,
        counted: usize,
    },
    SigmoidBce {
        logits: Var,
        targets: Rc<Vec<f64>>,
        sig: Vec<f64>,
    },
    MeanEntropy {
        logits: Var,
        probs: Vec<f64>,
        row_h: Vec<f64>,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients keyed by tape variable, produced by `Tape::backward`.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a variable that is known to require grad; zero tensor if
    /// the variable never influenced the loss.
    pub fn take(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Row-wise softmax into a fresh buffer.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    let mut out = vec![0.0; n * c];
    softmax_rows_into(logits.data(), n, c, &mut out);
    Tensor::new(vec![n, c], out)
}

fn softmax_rows_into(z: &[f64], n: usize, c: usize, out: &mut [f64]) {
    for i in 0..n {
        let row = &z[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (row[k] - m).exp();
            out[i * c + k] = e;
            sum += e;
        }
        for k in 0..c {
            out[i * c + k] /= sum;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// out = x . w + b, with x [N x Fin], w [Fin x Fout], b [Fout].
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = self.value(x).dims2()?;
        let (wfin, fout) = self.value(w).dims2()?;
        if fin != wfin || self.value(b).numel() != fout {
            return Err(Error::Dimension(format!(
                "linear: x [{n}x{fin}] incompatible with w [{wfin}x{fout}] / b [{}]",
                self.value(b).numel()
            )));
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; n * fout];
        for i in 0..n {
            let orow = &mut out[i * fout..(i + 1) * fout];
            orow.copy_from_slice(bd);
            let xrow = &xd[i * fin..(i + 1) * fin];
            for (k, &xv) in xrow.iter().enumerate() {
                if xv != 0.0 {
                    let wrow = &wd[k * fout..(k + 1) * fout];
                    for (o, wv) in wrow.iter().enumerate() {
                        orow[o] += xv * wv;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(vec![n, fout], out)?, Op::Linear { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out).unwrap(), Op::Relu { x }, needs)
    }

    /// Batch normalization over rows. `TrainUpdate` normalizes by batch
    /// statistics and folds them into `state`; `EvalFrozen` normalizes by the
    /// running statistics and leaves `state` untouched.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: BnMode,
    ) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        if state.features() != f || self.value(gamma).numel() != f || self.value(beta).numel() != f
        {
            return Err(Error::Dimension(format!(
                "batchnorm: feature count mismatch (input {f})"
            )));
        }
        match mode {
            BnMode::TrainUpdate => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "batchnorm needs at least 2 rows in TrainUpdate mode, got {n}"
                    )));
                }
                let xd = self.value(x).data();
                let mut mean = vec![0.0; f];
                for i in 0..n {
                    for k in 0..f {
                        mean[k] += xd[i * f + k];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= n as f64;
                }
                let mut var = vec![0.0; f];
                for i in 0..n {
                    for k in 0..f {
                        let d = xd[i * f + k] - mean[k];
                        var[k] += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= n as f64;
                }
                let invstd: Vec<f64> =
                    var.iter().map(|&v| 1.0 / (v + state.epsilon).sqrt()).collect();
                let mut xhat = vec![0.0; n * f];
                for i in 0..n {
                    for k in 0..f {
                        xhat[i * f + k] = (xd[i * f + k] - mean[k]) * invstd[k];
                    }
                }
                state.update(&mean, &var);
                self.bn_output(x, gamma, beta, xhat, invstd, true)
            }
            BnMode::EvalFrozen => {
                let invstd: Vec<f64> = state
                    .running_var
                    .iter()
                    .map(|&v| 1.0 / (v + state.epsilon).sqrt())
                    .collect();
                let xd = self.value(x).data();
                let mut xhat = vec![0.0; n * f];
                for i in 0..n {
                    for k in 0..f {
                        xhat[i * f + k] = (xd[i * f + k] - state.running_mean[k]) * invstd[k];
                    }
                }
                self.bn_output(x, gamma, beta, xhat, invstd, false)
            }
        }
    }

    fn bn_output(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        invstd: Vec<f64>,
        train: bool,
    ) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for k in 0..f {
                out[i * f + k] = g[k] * xhat[i * f + k] + b[k];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let op = if train {
            Op::BnTrain { x, gamma, beta, xhat, invstd }
        } else {
            Op::BnEval { x, gamma, beta, xhat, invstd }
        };
        Ok(self.push(Tensor::new(vec![n, f], out)?, op, needs))
    }

    /// Mean over each row's neighborhood. Every row must have at least one
    /// neighbor (balls centered on a point always contain it).
    pub fn ball_mean(&mut self, x: Var, adj: Rc<Csr>) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        if adj.rows() != n {
            return Err(Error::Dimension(format!(
                "ball_mean: adjacency has {} rows, input {n}",
                adj.rows()
            )));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            let nb = adj.neighbors(i);
            debug_assert!(!nb.is_empty(), "empty neighborhood at row {i}");
            let orow = &mut out[i * f..(i + 1) * f];
            for &j in nb {
                let xrow = &xd[j as usize * f..(j as usize + 1) * f];
                for (o, v) in xrow.iter().enumerate() {
                    orow[o] += v;
                }
            }
            let inv = 1.0 / nb.len() as f64;
            for v in orow.iter_mut() {
                *v *= inv;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![n, f], out)?, Op::BallMean { x, adj }, needs))
    }

    /// Gather rows of `x` by `idx` and append `extra_cols` constant columns
    /// per row. `extra` is row-major [len(idx) x extra_cols].
    pub fn gather_concat(
        &mut self,
        x: Var,
        idx: Rc<Vec<u32>>,
        extra: &[f64],
        extra_cols: usize,
    ) -> Result<Var> {
        let (n, f) = self.value(x).dims2()?;
        let rows = idx.len();
        if extra.len() != rows * extra_cols {
            return Err(Error::Dimension("gather_concat: extra size mismatch".into()));
        }
        if idx.iter().any(|&i| i as usize >= n) {
            return Err(Error::Dimension("gather_concat: index out of range".into()));
        }
        let xd = self.value(x).data();
        let w = f + extra_cols;
        let mut out = vec![0.0; rows * w];
        for r in 0..rows {
            let src = &xd[idx[r] as usize * f..(idx[r] as usize + 1) * f];
            out[r * w..r * w + f].copy_from_slice(src);
            out[r * w + f..(r + 1) * w].copy_from_slice(&extra[r * extra_cols..(r + 1) * extra_cols]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![rows, w], out)?,
            Op::GatherConcat { x, idx, extra_cols },
            needs,
        ))
    }

    /// Softmax-weighted pooling within segments. `segs` holds Q+1 row
    /// offsets into `values`/`scores`; every segment must be non-empty.
    pub fn segment_pool(&mut self, values: Var, scores: Var, segs: Rc<Vec<u32>>) -> Result<Var> {
        let (r, k) = self.value(values).dims2()?;
        let (rs, one) = self.value(scores).dims2()?;
        if rs != r || one != 1 {
            return Err(Error::Dimension("segment_pool: scores must be [R x 1]".into()));
        }
        let q = segs.len() - 1;
        if segs[q] as usize != r {
            return Err(Error::Dimension("segment_pool: offsets do not cover rows".into()));
        }
        let sd = self.value(scores).data();
        let mut weights = vec![0.0; r];
        for qi in 0..q {
            let (s, e) = (segs[qi] as usize, segs[qi + 1] as usize);
            debug_assert!(e > s, "empty segment {qi}");
            let m = sd[s..e].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in s..e {
                let w = (sd[i] - m).exp();
                weights[i] = w;
                sum += w;
            }
            for w in weights[s..e].iter_mut() {
                *w /= sum;
            }
        }
        let vd = self.value(values).data();
        let mut out = vec![0.0; q * k];
        for qi in 0..q {
            let (s, e) = (segs[qi] as usize, segs[qi + 1] as usize);
            let orow = &mut out[qi * k..(qi + 1) * k];
            for i in s..e {
                let w = weights[i];
                let vrow = &vd[i * k..(i + 1) * k];
                for (o, v) in vrow.iter().enumerate() {
                    orow[o] += w * v;
                }
            }
        }
        let needs = self.needs(values) || self.needs(scores);
        Ok(self.push(
            Tensor::new(vec![q, k], out)?,
            Op::SegmentPool { values, scores, segs, weights },
            needs,
        ))
    }

    /// Mean cross entropy over non-ignored rows; scalar output.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: Rc<Vec<u16>>,
        ignore_id: u16,
    ) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "cross entropy: {n} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l != ignore_id && l as usize >= c)
        {
            return Err(Error::Data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let zd = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        softmax_rows_into(zd, n, c, &mut probs);
        let mut loss = 0.0;
        let mut counted = 0usize;
        for i in 0..n {
            let l = labels[i];
            if l == ignore_id {
                continue;
            }
            counted += 1;
            let row = &zd[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - row[l as usize];
        }
        if counted == 0 {
            return Err(Error::EmptyLoss("all rows carry the ignore label".into()));
        }
        loss /= counted as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe { logits, labels, ignore_id, probs, counted },
            needs,
        ))
    }

    /// Mean binary cross entropy on logits, in log-sum-exp form.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Rc<Vec<f64>>) -> Result<Var> {
        let m = self.value(logits).numel();
        if m == 0 {
            return Err(Error::EmptyLoss("binary cross entropy over zero queries".into()));
        }
        if targets.len() != m {
            return Err(Error::Dimension(format!(
                "bce: {m} logits but {} targets",
                targets.len()
            )));
        }
        if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Data("bce targets must be 0 or 1".into()));
        }
        let zd = self.value(logits).data();
        let mut loss = 0.0;
        let mut sig = vec![0.0; m];
        for i in 0..m {
            let z = zd[i];
            loss += z.max(0.0) - z * targets[i] + (-z.abs()).exp().ln_1p();
            sig[i] = 1.0 / (1.0 + (-z).exp());
        }
        loss /= m as f64;
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SigmoidBce { logits, targets, sig }, needs))
    }

    /// Mean Shannon entropy of row-wise softmax distributions.
    pub fn mean_entropy(&mut self, logits: Var) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if n == 0 {
            return Err(Error::EmptyLoss("entropy over zero rows".into()));
        }
        let zd = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        softmax_rows_into(zd, n, c, &mut probs);
        let mut row_h = vec![0.0; n];
        for i in 0..n {
            let mut h = 0.0;
            for k in 0..c {
                let p = probs[i * c + k];
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            row_h[i] = h;
        }
        let loss = row_h.iter().sum::<f64>() / n as f64;
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), Op::MeanEntropy { logits, probs, row_h }, needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| c * v).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out).unwrap(), Op::Scale { x, c }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension("add: shape mismatch".into()));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::Add { a, b }, needs))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Dimension("backward: loss must be scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..self.nodes.len()).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, update: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape().to_vec()));
        }
        update(slot.as_mut().unwrap().data_mut());
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let gd = g.data();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, fin) = self.value(*x).dims2().unwrap();
                let fout = self.value(*b).numel();
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..n {
                        let grow = &gd[i * fout..(i + 1) * fout];
                        for k in 0..fin {
                            let wrow = &wd[k * fout..(k + 1) * fout];
                            let mut acc = 0.0;
                            for o in 0..fout {
                                acc += grow[o] * wrow[o];
                            }
                            dx[i * fin + k] += acc;
                        }
                    }
                });
                self.accumulate(grads, *w, |dw| {
                    for i in 0..n {
                        let grow = &gd[i * fout..(i + 1) * fout];
                        let xrow = &xd[i * fin..(i + 1) * fin];
                        for (k, &xv) in xrow.iter().enumerate() {
                            if xv != 0.0 {
                                let drow = &mut dw[k * fout..(k + 1) * fout];
                                for o in 0..fout {
                                    drow[o] += xv * grow[o];
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for i in 0..n {
                        for o in 0..fout {
                            db[o] += gd[i * fout + o];
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xd = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..xd.len() {
                        if xd[i] > 0.0 {
                            dx[i] += gd[i];
                        }
                    }
                });
            }
            Op::BnTrain { x, gamma, beta, xhat, invstd } => {
                let (n, f) = self.value(*x).dims2().unwrap();
                let gam = self.value(*gamma).data();
                self.accumulate(grads, *gamma, |dg| {
                    for i in 0..n {
                        for k in 0..f {
                            dg[k] += gd[i * f + k] * xhat[i * f + k];
                        }
                    }
                });
                self.accumulate(grads, *beta, |db| {
                    for i in 0..n {
                        for k in 0..f {
                            db[k] += gd[i * f + k];
                        }
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    // dxhat = g * gamma; dx from the batch-statistics chain
                    let mut sum_dxhat = vec![0.0; f];
                    let mut sum_dxhat_xhat = vec![0.0; f];
                    for i in 0..n {
                        for k in 0..f {
                            let dxh = gd[i * f + k] * gam[k];
                            sum_dxhat[k] += dxh;
                            sum_dxhat_xhat[k] += dxh * xhat[i * f + k];
                        }
                    }
                    let nf = n as f64;
                    for i in 0..n {
                        for k in 0..f {
                            let dxh = gd[i * f + k] * gam[k];
                            dx[i * f + k] += invstd[k] / nf
                                * (nf * dxh - sum_dxhat[k] - xhat[i * f + k] * sum_dxhat_xhat[k]);
                        }
                    }
                });
            }
            Op::BnEval { x, gamma, beta, xhat, invstd } => {
                let (n, f) = self.value(*x).dims2().unwrap();
                let gam = self.value(*gamma).data();
                self.accumulate(grads, *gamma, |dg| {
                    for i in 0..n {
                        for k in 0..f {
                            dg[k] += gd[i * f + k] * xhat[i * f + k];
                        }
                    }
                });
                self.accumulate(grads, *beta, |db| {
                    for i in 0..n {
                        for k in 0..f {
                            db[k] += gd[i * f + k];
                        }
                    }
                });
                self.accumulate(grads, *x, |dx| {
                    for i in 0..n {
                        for k in 0..f {
                            dx[i * f + k] += gd[i * f + k] * gam[k] * invstd[k];
                        }
                    }
                });
            }
            Op::BallMean { x, adj } => {
                let (n, f) = self.value(*x).dims2().unwrap();
                self.accumulate(grads, *x, |dx| {
                    // symmetric adjacency: rows j receive from each i in adj[j]
                    for j in 0..n {
                        let drow = &mut dx[j * f..(j + 1) * f];
                        for &i in adj.neighbors(j) {
                            let deg = (adj.offsets[i as usize + 1] - adj.offsets[i as usize]) as f64;
                            let grow = &gd[i as usize * f..(i as usize + 1) * f];
                            let inv = 1.0 / deg;
                            for o in 0..f {
                                drow[o] += grow[o] * inv;
                            }
                        }
                    }
                });
            }
            Op::GatherConcat { x, idx, extra_cols } => {
                let (_, f) = self.value(*x).dims2().unwrap();
                let w = f + extra_cols;
                self.accumulate(grads, *x, |dx| {
                    for (r, &i) in idx.iter().enumerate() {
                        let drow = &mut dx[i as usize * f..(i as usize + 1) * f];
                        let grow = &gd[r * w..r * w + f];
                        for o in 0..f {
                            drow[o] += grow[o];
                        }
                    }
                });
            }
            Op::SegmentPool { values, scores, segs, weights } => {
                let (_, k) = self.value(*values).dims2().unwrap();
                let vd = self.value(*values).data();
                let q = segs.len() - 1;
                self.accumulate(grads, *values, |dv| {
                    for qi in 0..q {
                        let (s, e) = (segs[qi] as usize, segs[qi + 1] as usize);
                        let grow = &gd[qi * k..(qi + 1) * k];
                        for i in s..e {
                            let w = weights[i];
                            let drow = &mut dv[i * k..(i + 1) * k];
                            for o in 0..k {
                                drow[o] += w * grow[o];
                            }
                        }
                    }
                });
                self.accumulate(grads, *scores, |ds| {
                    for qi in 0..q {
                        let (s, e) = (segs[qi] as usize, segs[qi + 1] as usize);
                        let grow = &gd[qi * k..(qi + 1) * k];
                        // a_i = v_i . g ; ds_i = w_i (a_i - sum_j w_j a_j)
                        let mut mean_a = 0.0;
                        let mut a = vec![0.0; e - s];
                        for i in s..e {
                            let vrow = &vd[i * k..(i + 1) * k];
                            let mut dot = 0.0;
                            for o in 0..k {
                                dot += vrow[o] * grow[o];
                            }
                            a[i - s] = dot;
                            mean_a += weights[i] * dot;
                        }
                        for i in s..e {
                            ds[i] += weights[i] * (a[i - s] - mean_a);
                        }
                    }
                });
            }
            Op::SoftmaxCe { logits, labels, ignore_id, probs, counted } => {
                let (n, c) = self.value(*logits).dims2().unwrap();
                let scale = gd[0] / *counted as f64;
                self.accumulate(grads, *logits, |dz| {
                    for i in 0..n {
                        let l = labels[i];
                        if l == *ignore_id {
                            continue;
                        }
                        for k in 0..c {
                            let ind = if k == l as usize { 1.0 } else { 0.0 };
                            dz[i * c + k] += scale * (probs[i * c + k] - ind);
                        }
                    }
                });
            }
            Op::SigmoidBce { logits, targets, sig } => {
                let m = sig.len();
                let scale = gd[0] / m as f64;
                self.accumulate(grads, *logits, |dz| {
                    for i in 0..m {
                        dz[i] += scale * (sig[i] - targets[i]);
                    }
                });
            }
            Op::MeanEntropy { logits, probs, row_h } => {
                let (n, c) = self.value(*logits).dims2().unwrap();
                let scale = gd[0] / n as f64;
                self.accumulate(grads, *logits, |dz| {
                    for i in 0..n {
                        for k in 0..c {
                            let p = probs[i * c + k];
                            if p > 0.0 {
                                dz[i * c + k] += scale * (-p * (p.ln() + row_h[i]));
                            }
                        }
                    }
                });
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, |dx| {
                    for i in 0..gd.len() {
                        dx[i] += c * gd[i];
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |da| {
                    for i in 0..gd.len() {
                        da[i] += gd[i];
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for i in 0..gd.len() {
                        db[i] += gd[i];
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_of(t: &Tape, v: Var) -> f64 {
        t.value(v).data()[0]
    }

    #[test]
    fn linear_scalar_affine() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let w = t.param(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let b = t.param(Tensor::new(vec![1], vec![1.0]).unwrap());
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[7.0]);
    }

    #[test]
    fn linear_rejects_mismatched_inner_dim() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(vec![2, 3]));
        let w = t.param(Tensor::zeros(vec![4, 5]));
        let b = t.param(Tensor::zeros(vec![5]));
        assert!(t.linear(x, w, b).is_err());
    }

    #[test]
    fn ball_mean_identity_adjacency_is_identity() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let adj = Rc::new(Csr { offsets: vec![0, 1, 2, 3], targets: vec![0, 1, 2] });
        let y = t.ball_mean(x, adj).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
    }

    #[test]
    fn ball_mean_averages_neighbors() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap());
        // both rows see both points
        let adj = Rc::new(Csr { offsets: vec![0, 2, 4], targets: vec![0, 1, 0, 1] });
        let y = t.ball_mean(x, adj).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let mut t = Tape::new();
        let z = t.param(Tensor::zeros(vec![5, 4]));
        let labels = Rc::new(vec![0u16, 1, 2, 3, 0]);
        let loss = t.softmax_cross_entropy(z, labels, u16::MAX).unwrap();
        assert!((scalar_of(&t, loss) - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_flagged_rows() {
        let mut t = Tape::new();
        // row 1 has a huge wrong logit; ignoring it must leave ln C
        let z = t.param(
            Tensor::new(vec![2, 2], vec![0.0, 0.0, 100.0, 0.0]).unwrap(),
        );
        let labels = Rc::new(vec![0u16, u16::MAX]);
        let loss = t.softmax_cross_entropy(z, labels.clone(), u16::MAX).unwrap();
        assert!((scalar_of(&t, loss) - 2.0f64.ln()).abs() < 1e-12);
        let grads = t.backward(loss).unwrap();
        let dz = grads.get(z).unwrap().data();
        assert_eq!(&dz[2..4], &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_all_ignored_is_an_error() {
        let mut t = Tape::new();
        let z = t.param(Tensor::zeros(vec![2, 3]));
        let labels = Rc::new(vec![9u16, 9]);
        assert!(matches!(
            t.softmax_cross_entropy(z, labels, 9),
            Err(Error::EmptyLoss(_))
        ));
    }

    #[test]
    fn bce_zero_logit_full_target_is_ln_2() {
        let mut t = Tape::new();
        let z = t.param(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        let loss = t.sigmoid_bce(z, Rc::new(vec![1.0])).unwrap();
        assert!((scalar_of(&t, loss) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_is_stable_at_saturation() {
        let mut t = Tape::new();
        let z = t.param(Tensor::new(vec![2, 1], vec![500.0, -500.0]).unwrap());
        let loss = t.sigmoid_bce(z, Rc::new(vec![1.0, 0.0])).unwrap();
        let v = scalar_of(&t, loss);
        assert!(v.is_finite());
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn mean_entropy_bounds() {
        let c = 6usize;
        let mut t = Tape::new();
        let uniform = t.param(Tensor::zeros(vec![3, c]));
        let h = t.mean_entropy(uniform).unwrap();
        assert!((scalar_of(&t, h) - (c as f64).ln()).abs() < 1e-12);

        let mut peaked = Tensor::zeros(vec![3, c]);
        peaked.data_mut()[0] = 60.0;
        peaked.data_mut()[c] = 60.0;
        peaked.data_mut()[2 * c] = 60.0;
        let z = t.param(peaked);
        let h = t.mean_entropy(z).unwrap();
        assert!(scalar_of(&t, h) >= 0.0 && scalar_of(&t, h) < 1e-9);
    }

    #[test]
    fn segment_pool_uniform_scores_is_mean() {
        let mut t = Tape::new();
        let v = t.param(Tensor::new(vec![3, 2], vec![1.0, 0.0, 3.0, 0.0, 10.0, 4.0]).unwrap());
        let s = t.param(Tensor::zeros(vec![3, 1]));
        let out = t.segment_pool(v, s, Rc::new(vec![0, 2, 3])).unwrap();
        assert_eq!(t.value(out).data(), &[2.0, 0.0, 10.0, 4.0]);
    }

    #[test]
    fn gather_concat_assembles_rows() {
        let mut t = Tape::new();
        let z = t.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let idx = Rc::new(vec![1u32, 0]);
        let extra = vec![9.0, 8.0, 7.0, 6.0];
        let out = t.gather_concat(z, idx, &extra, 2).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 4.0, 9.0, 8.0, 1.0, 2.0, 7.0, 6.0]);
    }

    #[test]
    fn backward_linear_matches_hand_computation() {
        // loss = mean entropy is overkill here; use CE with one row.
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = t.param(Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap());
        let b = t.param(Tensor::zeros(vec![2]));
        let z = t.linear(x, w, b).unwrap();
        let loss = t.softmax_cross_entropy(z, Rc::new(vec![0u16]), u16::MAX).unwrap();
        let grads = t.backward(loss).unwrap();
        // dz = p - onehot = [0.5-1, 0.5] = [-0.5, 0.5]
        let dw = grads.get(w).unwrap().data();
        assert_eq!(dw, &[-0.5, 0.5, -1.0, 1.0]);
        let db = grads.get(b).unwrap().data();
        assert_eq!(db, &[-0.5, 0.5]);
        assert!(grads.get(x).is_none(), "constants receive no gradient");
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(vec![2, 2]));
        let y = t.relu(x);
        assert!(t.backward(y).is_err());
    }
}
