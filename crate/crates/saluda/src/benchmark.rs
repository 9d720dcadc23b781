//! The built-in synthetic benchmark: two lidar sensors with different beam
//! layouts scanning independently generated scenes of the same world
//! distribution. The source sensor provides labels; the target sensor is
//! the adaptation problem.
//!
//! Sizes here are tuned so a full sweep-and-compare study runs on one core
//! in well under an hour.

use crate::error::Result;
use crate::geom::cloud::{Domain, PointCloud};
use crate::seeds::derive_n;
use crate::sim::primitive::PrimitiveKind;
use crate::sim::scan::{cast_scan, LidarModel};
use crate::sim::scene_gen::{generate_scene, ObjectClassSpec, SceneSpec, SizeRange};

pub const CLASS_NAMES: [&str; 6] =
    ["ground", "building", "car", "pole", "vegetation", "pedestrian"];

pub fn default_scene_spec() -> SceneSpec {
    let object = |class_id: u16, kind, count, min: [f64; 3], max: [f64; 3]| ObjectClassSpec {
        class_id,
        kind,
        count,
        size: SizeRange { min, max },
    };
    SceneSpec {
        extent: 18.0,
        ground_class: 0,
        sensor_clearance: 2.0,
        objects: vec![
            object(1, PrimitiveKind::Box, 3, [4.0, 4.0, 3.0], [8.0, 8.0, 6.0]),
            object(2, PrimitiveKind::Box, 4, [3.5, 1.6, 1.4], [4.5, 2.0, 1.7]),
            // cylinder sizes are (radius, height, unused)
            object(3, PrimitiveKind::Cylinder, 6, [0.12, 4.0, 0.0], [0.18, 6.0, 0.0]),
            object(4, PrimitiveKind::Sphere, 5, [0.8, 0.8, 0.8], [1.8, 1.8, 1.8]),
            object(5, PrimitiveKind::Cylinder, 8, [0.35, 1.5, 0.0], [0.50, 1.9, 0.0]),
        ],
    }
}

/// 32-beam sensor mounted at 1.80 m.
pub fn source_lidar() -> LidarModel {
    LidarModel {
        beam_count: 32,
        elevation_min: -0.42,
        elevation_max: 0.08,
        azimuth_steps: 192,
        max_range: 40.0,
        mount_height: 1.8,
        noise_sigma: 0.01,
    }
}

/// 64-beam sensor at the same mount: twice the vertical density of the
/// source over the same field of view.
pub fn target_lidar() -> LidarModel {
    LidarModel {
        beam_count: 64,
        elevation_min: -0.42,
        elevation_max: 0.08,
        azimuth_steps: 192,
        max_range: 40.0,
        mount_height: 1.8,
        noise_sigma: 0.01,
    }
}

/// Downsampling resolution shared by training and evaluation.
pub const BENCH_VOXEL_SIZE: f64 = 0.15;

pub const SOURCE_TRAIN_FRAMES: u64 = 40;
pub const SOURCE_VAL_FRAMES: u64 = 8;
pub const TARGET_TRAIN_FRAMES: u64 = 40;
pub const TARGET_EVAL_FRAMES: u64 = 20;

pub struct Benchmark {
    pub source_train: Vec<PointCloud>,
    pub source_val: Vec<PointCloud>,
    /// Labels retained here for bookkeeping; adaptation paths must strip
    /// them (see [`crate::validators::UnlabeledFrames`]).
    pub target_train: Vec<PointCloud>,
    pub target_eval: Vec<PointCloud>,
}

/// One labeled frame of `split` from an independently drawn scene.
pub fn simulate_frame(
    seed: u64,
    split: &str,
    index: u64,
    spec: &SceneSpec,
    lidar: &LidarModel,
    domain: Domain,
) -> Result<PointCloud> {
    let scene_seed = derive_n(seed, &format!("bench/{split}/scene"), index);
    let scan_seed = derive_n(seed, &format!("bench/{split}/scan"), index);
    let scene = generate_scene(scene_seed, spec)?;
    let mut cloud = cast_scan(&scene, lidar, scan_seed);
    cloud.domain = domain;
    cloud.frame_id = index;
    Ok(cloud)
}

/// [`simulate_frame`] against the default benchmark scene distribution.
pub fn benchmark_frame(
    seed: u64,
    split: &str,
    index: u64,
    lidar: &LidarModel,
    domain: Domain,
) -> Result<PointCloud> {
    simulate_frame(seed, split, index, &default_scene_spec(), lidar, domain)
}

fn split(
    seed: u64,
    name: &str,
    count: u64,
    lidar: &LidarModel,
    domain: Domain,
) -> Result<Vec<PointCloud>> {
    (0..count).map(|i| benchmark_frame(seed, name, i, lidar, domain)).collect()
}

pub fn generate_benchmark(seed: u64) -> Result<Benchmark> {
    let src = source_lidar();
    let tgt = target_lidar();
    Ok(Benchmark {
        source_train: split(seed, "source-train", SOURCE_TRAIN_FRAMES, &src, Domain::Source)?,
        source_val: split(seed, "source-val", SOURCE_VAL_FRAMES, &src, Domain::Source)?,
        target_train: split(seed, "target-train", TARGET_TRAIN_FRAMES, &tgt, Domain::Target)?,
        target_eval: split(seed, "target-eval", TARGET_EVAL_FRAMES, &tgt, Domain::Target)?,
    })
}
