//! Per-frame geometry the network consumes: input features, per-block ball
//! adjacency, and the spatial index reused for query support lookups.
//!
//! Input features are deliberately sensor-relative — height above the sensor
//! plane, log point density in a 1 m ball, and a constant — so the whole
//! frame can translate freely. Intensity is never an input.

use crate::error::Result;
use crate::geom::cloud::PointCloud;
use crate::geom::search::{ball_adjacency, ball_query};
use crate::geom::voxel::{build_index, VoxelIndex};
use crate::model::state::ModelConfig;
use crate::nn::tape::Csr;
use crate::nn::tensor::Tensor;
use std::rc::Rc;

/// Index cell size for neighbor lookups. Purely a performance knob: query
/// results are identical for any positive value.
pub const INDEX_VOXEL: f64 = 0.5;

pub struct FrameGeometry {
    /// N x 3: (height above sensor plane, ln(1 + ball count), 1).
    pub features: Tensor,
    /// One CSR block per backbone aggregation radius.
    pub adjacency: Vec<Rc<Csr>>,
    pub index: VoxelIndex,
    pub positions: Vec<[f64; 3]>,
}

pub fn prepare_geometry(cloud: &PointCloud, config: &ModelConfig) -> Result<FrameGeometry> {
    let index = build_index(cloud, INDEX_VOXEL)?;
    let n = cloud.len();
    let mut features = vec![0.0; n * 3];
    for (i, &p) in cloud.positions.iter().enumerate() {
        let count = ball_query(&index, p, config.density_radius).len();
        features[i * 3] = p[2] - cloud.sensor_origin[2];
        features[i * 3 + 1] = (1.0 + count as f64).ln();
        features[i * 3 + 2] = 1.0;
    }
    let adjacency = config
        .block_radii
        .iter()
        .map(|&r| Rc::new(ball_adjacency(&index, r)))
        .collect();
    Ok(FrameGeometry {
        features: Tensor::new(vec![n, 3], features)?,
        adjacency,
        index,
        positions: cloud.positions.clone(),
    })
}
