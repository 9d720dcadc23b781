pub mod config;
pub mod kitti;
pub mod latents;
pub mod native;
pub mod ply;

pub use config::{load_experiment, ExperimentConfig};
pub use kitti::{read_kitti_scan, ClassMap};
pub use latents::dump_latents;
pub use native::{load_cloud, parse_cloud, save_cloud, write_cloud};
pub use ply::{export_labeled_cloud, export_queries, write_ply};
