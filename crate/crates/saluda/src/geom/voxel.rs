//! Voxel hashing and downsampling.
//!
//! A voxel is the integer cell floor(p / voxel_size). Downsampling replaces
//! each occupied voxel by its centroid with the majority label; the returned
//! mapping projects per-representative predictions back onto every original
//! point. All outputs are ordered by the smallest original point index per
//! voxel so nothing depends on hash-map iteration order.

use crate::error::{Error, Result};
use crate::geom::cloud::PointCloud;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct VoxelIndex {
    voxel_size: f64,
    buckets: HashMap<[i64; 3], Vec<u32>>,
    positions: Vec<[f64; 3]>,
}

pub fn voxel_coord(p: [f64; 3], voxel_size: f64) -> [i64; 3] {
    [
        (p[0] / voxel_size).floor() as i64,
        (p[1] / voxel_size).floor() as i64,
        (p[2] / voxel_size).floor() as i64,
    ]
}

impl VoxelIndex {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, coord: [i64; 3]) -> &[u32] {
        self.buckets.get(&coord).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn build_index(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelIndex> {
    if voxel_size <= 0.0 || !voxel_size.is_finite() {
        return Err(Error::Dimension(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (i, &p) in cloud.positions.iter().enumerate() {
        buckets.entry(voxel_coord(p, voxel_size)).or_default().push(i as u32);
    }
    Ok(VoxelIndex { voxel_size, buckets, positions: cloud.positions.clone() })
}

/// One centroid per occupied voxel; labels by majority vote with ties going
/// to the smaller class id. Returns the downsampled cloud and, for every
/// original point, the index of its representative.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<(PointCloud, Vec<u32>)> {
    let index = build_index(cloud, voxel_size)?;
    // representatives ordered by the smallest original index in each voxel
    let mut order: Vec<&Vec<u32>> = index.buckets.values().collect();
    order.sort_by_key(|members| members[0]);

    let n_reps = order.len();
    let mut positions = Vec::with_capacity(n_reps);
    let mut labels = cloud.labels.as_ref().map(|_| Vec::with_capacity(n_reps));
    let mut mapping = vec![0u32; cloud.len()];
    for (rep, members) in order.iter().enumerate() {
        let mut c = [0.0; 3];
        for &m in *members {
            let p = cloud.positions[m as usize];
            c[0] += p[0];
            c[1] += p[1];
            c[2] += p[2];
            mapping[m as usize] = rep as u32;
        }
        let inv = 1.0 / members.len() as f64;
        positions.push([c[0] * inv, c[1] * inv, c[2] * inv]);
        if let (Some(out), Some(src)) = (labels.as_mut(), cloud.labels.as_ref()) {
            out.push(majority_label(members, src));
        }
    }
    let down = PointCloud {
        positions,
        sensor_origin: cloud.sensor_origin,
        labels,
        domain: cloud.domain,
        frame_id: cloud.frame_id,
    };
    Ok((down, mapping))
}

fn majority_label(members: &[u32], labels: &[u16]) -> u16 {
    let mut counts: HashMap<u16, u32> = HashMap::new();
    for &m in members {
        *counts.entry(labels[m as usize]).or_insert(0) += 1;
    }
    // highest count wins; ties break toward the smaller class id
    let mut best = (0u32, u16::MAX);
    for (&label, &count) in &counts {
        if count > best.0 || (count == best.0 && label < best.1) {
            best = (count, label);
        }
    }
    best.1
}
