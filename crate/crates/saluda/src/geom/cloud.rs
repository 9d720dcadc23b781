//! The labeled point cloud passed between simulator, model, and evaluation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Source => f.write_str("source"),
            Domain::Target => f.write_str("target"),
        }
    }
}

/// One lidar frame. `sensor_origin` is the optical center used for all
/// line-of-sight reasoning; labels are per-point class ids and may carry an
/// ignore class.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    pub sensor_origin: [f64; 3],
    pub labels: Option<Vec<u16>>,
    pub domain: Domain,
    pub frame_id: u64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Enforce the container invariants: finite coordinates, matching label
    /// count.
    pub fn validate(&self) -> Result<()> {
        if !self.sensor_origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("sensor origin is not finite".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!("point {i} is not finite")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.positions.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} points",
                    labels.len(),
                    self.positions.len()
                )));
            }
        }
        Ok(())
    }
}
