//! Visibility-based occupancy queries.
//!
//! Every scanned point p testifies that the segment from the sensor center c
//! to p crosses empty space and that something solid sits just past p. Each
//! sampled anchor therefore yields three pseudo-labeled queries on the line
//! of sight: one uniform on [c, q_front] and one just in front of p (both
//! empty), one just behind p (full).

use crate::error::{Error, Result};
use crate::geom::cloud::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Offset scale: front/behind distances are drawn uniformly from [0, δ].
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_ANCHORS_PER_FRAME: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryRole {
    Sight,
    Front,
    Behind,
}

impl QueryRole {
    /// Labels are a pure function of the role: in front of and toward the
    /// sensor is empty, past the surface is full.
    pub fn occupancy_label(self) -> u8 {
        match self {
            QueryRole::Sight | QueryRole::Front => 0,
            QueryRole::Behind => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryPoint {
    pub position: [f64; 3],
    pub occupancy_label: u8,
    pub anchor_index: u32,
    pub role: QueryRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<QueryPoint>,
    pub delta: f64,
    pub frame_id: u64,
}

/// The three queries for one anchor, with the random draws passed in:
/// `a`, `b` in [0, δ] are the front/behind offsets, `s` in [0, 1] the
/// position of the sight query along [c, q_front].
pub fn queries_for_anchor(
    c: [f64; 3],
    p: [f64; 3],
    anchor_index: u32,
    a: f64,
    b: f64,
    s: f64,
) -> [QueryPoint; 3] {
    let to_sensor = [c[0] - p[0], c[1] - p[1], c[2] - p[2]];
    let norm = (to_sensor[0].powi(2) + to_sensor[1].powi(2) + to_sensor[2].powi(2)).sqrt();
    let u = [to_sensor[0] / norm, to_sensor[1] / norm, to_sensor[2] / norm];
    let q_front = [p[0] + a * u[0], p[1] + a * u[1], p[2] + a * u[2]];
    let q_behind = [p[0] - b * u[0], p[1] - b * u[1], p[2] - b * u[2]];
    let q_sight = [
        c[0] + s * (q_front[0] - c[0]),
        c[1] + s * (q_front[1] - c[1]),
        c[2] + s * (q_front[2] - c[2]),
    ];
    let q = |position, role: QueryRole| QueryPoint {
        position,
        occupancy_label: role.occupancy_label(),
        anchor_index,
        role,
    };
    [
        q(q_sight, QueryRole::Sight),
        q(q_front, QueryRole::Front),
        q(q_behind, QueryRole::Behind),
    ]
}

/// Uniform sample of point indices without replacement, ascending. All
/// indices when `count >= N`.
pub fn subsample_anchors(cloud: &PointCloud, count: usize, rng_seed: u64) -> Vec<u32> {
    sample_indices(cloud.len(), count, &mut ChaCha20Rng::seed_from_u64(rng_seed))
}

fn sample_indices(n: usize, count: usize, rng: &mut ChaCha20Rng) -> Vec<u32> {
    if count >= n {
        return (0..n as u32).collect();
    }
    let mut picked = rand::seq::index::sample(rng, n, count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| i as u32).collect()
}

/// Draw up to `anchors_per_frame` anchors (skipping points within δ of the
/// sensor, whose front query could cross it) and emit three queries each.
pub fn sample_visibility_queries(
    cloud: &PointCloud,
    delta: f64,
    rng_seed: u64,
    anchors_per_frame: usize,
) -> Result<QuerySet> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::Dimension(format!("query offset must be positive, got {delta}")));
    }
    let c = cloud.sensor_origin;
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::MissingOrigin);
    }
    let eligible: Vec<u32> = cloud
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            d2 > delta * delta
        })
        .map(|(i, _)| i as u32)
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let chosen = sample_indices(eligible.len(), anchors_per_frame, &mut rng);
    let mut queries = Vec::with_capacity(3 * chosen.len());
    for &e in &chosen {
        let anchor = eligible[e as usize];
        let a = rng.gen_range(0.0..delta);
        let b = rng.gen_range(0.0..delta);
        let s = rng.gen::<f64>();
        queries.extend(queries_for_anchor(c, cloud.positions[anchor as usize], anchor, a, b, s));
    }
    Ok(QuerySet { queries, delta, frame_id: cloud.frame_id })
}
