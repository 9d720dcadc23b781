//! Forward passes for the shared encoder and both heads.
//!
//! `BoundModel` registers every parameter on a tape once and then builds the
//! graph; training drives it directly so gradients flow back into the
//! `ParamSet` order expected by the optimizer. The free functions below are
//! the inference-style entry points that assemble geometry themselves.

use crate::error::{Error, Result};
use crate::geom::cloud::PointCloud;
use crate::geom::search::ball_query;
use crate::geom::voxel::VoxelIndex;
use crate::model::features::{prepare_geometry, FrameGeometry};
use crate::model::state::NetworkState;
use crate::nn::batchnorm::BnMode;
use crate::nn::tape::{softmax_rows, Csr, Grads, Tape, Var};
use crate::nn::tensor::Tensor;
use crate::queries::QuerySet;
use std::rc::Rc;

/// Per-point latent codes for one frame.
#[derive(Debug, Clone)]
pub struct LatentField {
    /// N x d.
    pub values: Tensor,
    pub frame_id: u64,
}

/// Occupancy predictions aligned with the query list; `supported[q]` is
/// false when no point fell inside the query's ball, in which case
/// `probs[q]` is NaN and must not be consumed.
#[derive(Debug, Clone)]
pub struct SurfOutput {
    pub probs: Vec<f64>,
    pub supported: Vec<bool>,
}

/// Everything the surf head needs besides latents.
pub struct SurfBatch {
    pub gather: Rc<Vec<u32>>,
    pub offsets: Rc<Vec<u32>>,
    pub relative: Vec<f64>,
    pub supported: Vec<bool>,
    pub targets: Vec<f64>,
}

/// Collect support rows for every query: indices into the latent rows, the
/// p - q offsets, and segment boundaries. Unsupported queries are masked.
pub fn gather_support(
    positions: &[[f64; 3]],
    index: &VoxelIndex,
    queries: &QuerySet,
    radius: f64,
) -> Result<SurfBatch> {
    let mut gather = Vec::new();
    let mut offsets = vec![0u32];
    let mut relative = Vec::new();
    let mut supported = vec![false; queries.queries.len()];
    let mut targets = Vec::new();
    for (qi, q) in queries.queries.iter().enumerate() {
        let support = ball_query(index, q.position, radius);
        if support.is_empty() {
            continue;
        }
        supported[qi] = true;
        for &pi in &support {
            let p = positions[pi as usize];
            gather.push(pi);
            relative.extend_from_slice(&[
                p[0] - q.position[0],
                p[1] - q.position[1],
                p[2] - q.position[2],
            ]);
        }
        offsets.push(gather.len() as u32);
        targets.push(q.occupancy_label as f64);
    }
    if targets.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(SurfBatch {
        gather: Rc::new(gather),
        offsets: Rc::new(offsets),
        relative,
        supported,
        targets,
    })
}

pub struct BoundModel<'n> {
    net: &'n mut NetworkState,
    vars: Vec<Var>,
}

impl NetworkState {
    /// Register all parameters on `tape` as differentiable leaves.
    pub fn bind<'n>(&'n mut self, tape: &mut Tape) -> BoundModel<'n> {
        let vars = self.params.iter().map(|(_, t)| tape.param(t.clone())).collect();
        BoundModel { net: self, vars }
    }
}

impl BoundModel<'_> {
    fn var(&self, name: &str) -> Var {
        self.vars[self
            .net
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("no parameter named '{name}'"))]
    }

    /// Encoder: per-block linear → ball mean → batch norm → ReLU, then a
    /// final linear down to the latent width.
    pub fn backbone(
        &mut self,
        tape: &mut Tape,
        features: &Tensor,
        adjacency: &[Rc<Csr>],
        mode: BnMode,
    ) -> Result<Var> {
        if adjacency.len() != self.net.config.block_widths.len() {
            return Err(Error::Dimension(format!(
                "{} adjacency blocks for {} aggregation blocks",
                adjacency.len(),
                self.net.config.block_widths.len()
            )));
        }
        let mut x = tape.constant(features.clone());
        for i in 0..self.net.config.block_widths.len() {
            let w = self.var(&format!("block{i}.w"));
            let b = self.var(&format!("block{i}.b"));
            let gamma = self.var(&format!("block{i}.gamma"));
            let beta = self.var(&format!("block{i}.beta"));
            x = tape.linear(x, w, b)?;
            x = tape.ball_mean(x, adjacency[i].clone())?;
            x = tape.batchnorm(x, gamma, beta, &mut self.net.bn[i], mode)?;
            x = tape.relu(x);
        }
        tape.linear(x, self.var("latent.w"), self.var("latent.b"))
    }

    /// Class logits, one row per point.
    pub fn cls_logits(&self, tape: &mut Tape, latents: Var) -> Result<Var> {
        tape.linear(latents, self.var("cls.w"), self.var("cls.b"))
    }

    /// Occupancy logits for the supported queries, one row each: gather
    /// [z_p ; p - q] rows, run the row MLP, pool value rows with softmax
    /// scores per query, project to a scalar.
    pub fn surf_logits(&self, tape: &mut Tape, latents: Var, batch: &SurfBatch) -> Result<Var> {
        let rows = tape.gather_concat(latents, batch.gather.clone(), &batch.relative, 3)?;
        let h = tape.linear(rows, self.var("surf.mlp0.w"), self.var("surf.mlp0.b"))?;
        let h = tape.relu(h);
        let h = tape.linear(h, self.var("surf.mlp1.w"), self.var("surf.mlp1.b"))?;
        let h = tape.relu(h);
        let values = tape.linear(h, self.var("surf.value.w"), self.var("surf.value.b"))?;
        let scores = tape.linear(h, self.var("surf.score.w"), self.var("surf.score.b"))?;
        let pooled = tape.segment_pool(values, scores, batch.offsets.clone())?;
        tape.linear(pooled, self.var("surf.out.w"), self.var("surf.out.b"))
    }

    /// Gradients in parameter-set order, zeros where a parameter did not
    /// reach the loss.
    pub fn grads_in_order(&self, grads: &mut Grads) -> Vec<Tensor> {
        (0..self.vars.len())
            .map(|i| grads.take(self.vars[i], self.net.params.at(i).shape()))
            .collect()
    }
}

/// Latents for a downsampled frame. Empty frames yield an empty field
/// without touching the network.
pub fn backbone_forward(
    net: &mut NetworkState,
    cloud: &PointCloud,
    mode: BnMode,
) -> Result<LatentField> {
    if cloud.is_empty() {
        return Ok(LatentField {
            values: Tensor::zeros(vec![0, net.config.latent_dim]),
            frame_id: cloud.frame_id,
        });
    }
    let geometry = prepare_geometry(cloud, &net.config)?;
    backbone_on_geometry(net, &geometry, cloud.frame_id, mode)
}

pub fn backbone_on_geometry(
    net: &mut NetworkState,
    geometry: &FrameGeometry,
    frame_id: u64,
    mode: BnMode,
) -> Result<LatentField> {
    let mut tape = Tape::new();
    let mut bound = net.bind(&mut tape);
    let latents = bound.backbone(&mut tape, &geometry.features, &geometry.adjacency, mode)?;
    Ok(LatentField { values: tape.value(latents).clone(), frame_id })
}

/// Row-wise class probabilities from latents.
pub fn cls_forward(net: &NetworkState, latents: &LatentField) -> Result<Tensor> {
    let mut tape = Tape::new();
    let l = tape.constant(latents.values.clone());
    let w = tape.constant(net.params.get("cls.w").expect("cls weights").clone());
    let b = tape.constant(net.params.get("cls.b").expect("cls bias").clone());
    let logits = tape.linear(l, w, b)?;
    softmax_rows(tape.value(logits))
}

/// Occupancy probabilities for a query set against a downsampled frame.
pub fn surf_forward(
    net: &mut NetworkState,
    latents: &LatentField,
    cloud: &PointCloud,
    queries: &QuerySet,
) -> Result<SurfOutput> {
    let geometry = prepare_geometry(cloud, &net.config)?;
    let batch = gather_support(
        &geometry.positions,
        &geometry.index,
        queries,
        net.config.surf_radius,
    )?;
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let latent_var = tape.constant(latents.values.clone());
    let logits = bound.surf_logits(&mut tape, latent_var, &batch)?;
    let mut probs = vec![f64::NAN; queries.queries.len()];
    let mut it = tape.value(logits).data().iter();
    for (qi, &ok) in batch.supported.iter().enumerate() {
        if ok {
            let z = it.next().expect("one logit per supported query");
            probs[qi] = 1.0 / (1.0 + (-z).exp());
        }
    }
    Ok(SurfOutput { probs, supported: batch.supported })
}
