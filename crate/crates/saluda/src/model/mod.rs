//! Shared point encoder plus the semantic and occupancy heads.

pub mod features;
pub mod forward;
pub mod state;

pub use features::{prepare_geometry, FrameGeometry};
pub use forward::{
    backbone_forward, backbone_on_geometry, cls_forward, gather_support, surf_forward,
    BoundModel, LatentField, SurfBatch, SurfOutput,
};
pub use state::{ModelConfig, NetworkState};
