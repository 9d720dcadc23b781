//! Synthetic rotating-lidar simulator over analytic scenes: primitives with
//! closed-form intersections, deterministic scan casting, an exact occupancy
//! oracle, and random scene generation.

pub mod primitive;
pub mod scan;
pub mod scene_gen;

pub use primitive::{PrimitiveKind, ScenePrimitive};
pub use scan::{cast_scan, occupancy_oracle, LidarModel, Occupancy};
pub use scene_gen::{generate_scene, ObjectClassSpec, Scene, SceneSpec, SizeRange};
