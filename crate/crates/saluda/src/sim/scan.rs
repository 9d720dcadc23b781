//! Rotating-lidar scan casting over analytic scenes.

use crate::geom::cloud::{Domain, PointCloud};
use crate::sim::scene_gen::Scene;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Sensor description. Beams are spread evenly across the elevation range,
/// azimuths evenly over a full turn; the sensor sits on the z axis at
/// `mount_height`. Range noise is Gaussian along the ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    pub beam_count: u32,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub azimuth_steps: u32,
    pub max_range: f64,
    pub mount_height: f64,
    pub noise_sigma: f64,
}

impl LidarModel {
    pub fn sensor_origin(&self) -> [f64; 3] {
        [0.0, 0.0, self.mount_height]
    }

    pub fn elevations(&self) -> Vec<f64> {
        let n = self.beam_count as usize;
        if n == 1 {
            return vec![self.elevation_min];
        }
        let step = (self.elevation_max - self.elevation_min) / (n - 1) as f64;
        (0..n).map(|i| self.elevation_min + i as f64 * step).collect()
    }
}

/// One full revolution: for every (beam, azimuth) ray, the nearest surface
/// hit within range becomes a labeled point. Misses produce nothing.
/// Deterministic in (scene, lidar, seed).
pub fn cast_scan(scene: &Scene, lidar: &LidarModel, seed: u64) -> PointCloud {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, lidar.noise_sigma.max(0.0)).unwrap();
    let origin = lidar.sensor_origin();
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for elevation in lidar.elevations() {
        let (se, ce) = elevation.sin_cos();
        for step in 0..lidar.azimuth_steps {
            let azimuth = step as f64 * std::f64::consts::TAU / lidar.azimuth_steps as f64;
            let (sa, ca) = azimuth.sin_cos();
            let dir = [ce * ca, ce * sa, se];
            let mut hit: Option<(f64, u16)> = None;
            for prim in &scene.primitives {
                if let Some(t) = prim.ray_intersect(origin, dir) {
                    if t <= lidar.max_range && hit.map_or(true, |(best, _)| t < best) {
                        hit = Some((t, prim.class_id));
                    }
                }
            }
            if let Some((t, class_id)) = hit {
                let t = if lidar.noise_sigma > 0.0 { t + noise.sample(&mut rng) } else { t };
                positions.push([
                    origin[0] + t * dir[0],
                    origin[1] + t * dir[1],
                    origin[2] + t * dir[2],
                ]);
                labels.push(class_id);
            }
        }
    }
    PointCloud {
        positions,
        sensor_origin: origin,
        labels: Some(labels),
        domain: Domain::Source,
        frame_id: 0,
    }
}

/// Exact analytic occupancy at a point: full iff inside any solid primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupancy {
    Full,
    Empty,
}

pub fn occupancy_oracle(scene: &Scene, point: [f64; 3]) -> Occupancy {
    for prim in &scene.primitives {
        if prim.solid && prim.contains(point) {
            return Occupancy::Full;
        }
    }
    Occupancy::Empty
}
