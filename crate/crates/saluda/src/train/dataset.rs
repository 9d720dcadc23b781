//! Frames prepared for repeated training passes: voxel-downsampled once,
//! with the neighborhood structure and input features cached.

use crate::error::{Error, Result};
use crate::geom::cloud::PointCloud;
use crate::geom::voxel::voxel_downsample;
use crate::model::features::{prepare_geometry, FrameGeometry};
use crate::model::state::ModelConfig;
use std::rc::Rc;

pub struct PreparedFrame {
    /// Downsampled cloud (training operates on representatives).
    pub cloud: PointCloud,
    pub geometry: FrameGeometry,
    /// Representative labels, shared with the tape without copying.
    pub labels: Option<Rc<Vec<u16>>>,
    /// raw point index -> representative index, for projecting predictions
    /// back out.
    pub mapping: Vec<u32>,
}

pub struct FrameSet {
    frames: Vec<PreparedFrame>,
    voxel_size: f64,
}

impl FrameSet {
    pub fn prepare(clouds: &[PointCloud], voxel_size: f64, config: &ModelConfig) -> Result<Self> {
        let mut frames = Vec::with_capacity(clouds.len());
        for cloud in clouds {
            if cloud.is_empty() {
                return Err(Error::Data(format!("frame {} is empty", cloud.frame_id)));
            }
            let (down, mapping) = voxel_downsample(cloud, voxel_size)?;
            let geometry = prepare_geometry(&down, config)?;
            let labels = down.labels.clone().map(Rc::new);
            frames.push(PreparedFrame { cloud: down, geometry, labels, mapping });
        }
        Ok(FrameSet { frames, voxel_size })
    }

    pub fn empty(voxel_size: f64) -> Self {
        FrameSet { frames: Vec::new(), voxel_size }
    }

    pub fn frames(&self) -> &[PreparedFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }
}

/// Height-separable two-class test fixture shared across the training
/// tests.
#[cfg(test)]
pub(crate) fn blob_cloud(n: usize, frame_id: u64, seed: u64) -> PointCloud {
    use crate::geom::cloud::Domain;
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            // two height bands with a clear margin, so class membership
            // survives neighborhood averaging
            let z = if rng.gen_bool(0.5) {
                rng.gen_range(0.0..0.8)
            } else {
                rng.gen_range(1.8..2.5)
            };
            [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), z]
        })
        .collect();
    let labels = positions.iter().map(|p| (p[2] > 1.2) as u16).collect();
    PointCloud {
        positions,
        sensor_origin: [0.0, 0.0, 1.6],
        labels: Some(labels),
        domain: Domain::Source,
        frame_id,
    }
}
