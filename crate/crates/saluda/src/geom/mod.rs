//! Point-cloud container, voxel hashing, and fixed-radius neighbor search.

pub mod cloud;
pub mod search;
pub mod voxel;

pub use cloud::{Domain, PointCloud};
pub use search::{ball_adjacency, ball_query, knn};
pub use voxel::{build_index, voxel_coord, voxel_downsample, VoxelIndex};
