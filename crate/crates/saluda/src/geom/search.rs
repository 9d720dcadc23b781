//! Fixed-radius and k-nearest neighbor queries over a voxel index.

use crate::geom::voxel::VoxelIndex;
use crate::nn::tape::Csr;

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// All point indices within `radius` of `center` (inclusive — boundary
/// points count as support), in ascending index order.
pub fn ball_query(index: &VoxelIndex, center: [f64; 3], radius: f64) -> Vec<u32> {
    let vs = index.voxel_size();
    let r2 = radius * radius;
    let lo = [
        ((center[0] - radius) / vs).floor() as i64,
        ((center[1] - radius) / vs).floor() as i64,
        ((center[2] - radius) / vs).floor() as i64,
    ];
    let hi = [
        ((center[0] + radius) / vs).floor() as i64,
        ((center[1] + radius) / vs).floor() as i64,
        ((center[2] + radius) / vs).floor() as i64,
    ];
    let mut out = Vec::new();
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for z in lo[2]..=hi[2] {
                for &i in index.bucket([x, y, z]) {
                    if dist2(index.positions()[i as usize], center) <= r2 {
                        out.push(i);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// The k nearest points to `center`, closest first; distance ties break
/// toward the smaller index. Returns fewer than k when the index is small.
pub fn knn(index: &VoxelIndex, center: [f64; 3], k: usize) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = index
        .positions()
        .iter()
        .enumerate()
        .map(|(i, &p)| (dist2(p, center), i as u32))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Per-point ball neighborhoods as one CSR block, rows in point order. Balls
/// are centered on the points themselves, so the relation is symmetric and
/// every row contains at least its own point.
pub fn ball_adjacency(index: &VoxelIndex, radius: f64) -> Csr {
    let n = index.len();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets = Vec::new();
    offsets.push(0u32);
    for i in 0..n {
        targets.extend(ball_query(index, index.positions()[i], radius));
        offsets.push(targets.len() as u32);
    }
    Csr { offsets, targets }
}
