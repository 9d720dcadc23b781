//! Readers for the KITTI-style on-disk layout: `.bin` scans of f32
//! (x, y, z, intensity) records and `.label` files of u32 entries whose low
//! 16 bits carry the semantic class.

use crate::error::{Error, Result};
use crate::geom::cloud::{Domain, PointCloud};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Raw-label to train-id remapping. Raw classes missing from the table
/// collapse to the ignore id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMap {
    /// Train-id order defines the class count.
    pub names: Vec<String>,
    pub ignore_id: u16,
    pub map: HashMap<u16, u16>,
    /// Free-form provenance note (e.g. whether the table was verified).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ClassMap {
    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(Error::Config("class map needs at least one class".into()));
        }
        if (self.ignore_id as usize) < self.names.len() {
            return Err(Error::Config("ignore_id collides with a train id".into()));
        }
        for (&raw, &train) in &self.map {
            if train as usize >= self.names.len() && train != self.ignore_id {
                return Err(Error::Config(format!(
                    "raw class {raw} maps to {train}, beyond the {} classes",
                    self.names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn map_raw(&self, raw: u16) -> u16 {
        self.map.get(&raw).copied().unwrap_or(self.ignore_id)
    }

    /// Identity map for the synthetic benchmark classes.
    pub fn synthetic() -> Self {
        let names =
            ["ground", "building", "car", "pole", "vegetation", "pedestrian"];
        ClassMap {
            names: names.iter().map(|s| s.to_string()).collect(),
            ignore_id: u16::MAX,
            map: (0..names.len() as u16).map(|i| (i, i)).collect(),
            note: None,
        }
    }
}

/// Read one `.bin` scan; intensity is discarded. Labels, when given, are
/// remapped through `classes`.
pub fn read_kitti_scan(
    bin_path: &Path,
    label_path: Option<&Path>,
    classes: &ClassMap,
) -> Result<PointCloud> {
    let bytes = std::fs::read(bin_path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Parse {
            offset: (bytes.len() - bytes.len() % 16) as u64,
            message: format!("scan size {} is not a multiple of 16", bytes.len()),
        });
    }
    let n = bytes.len() / 16;
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let at = |k: usize| {
            f32::from_le_bytes(bytes[i * 16 + 4 * k..i * 16 + 4 * k + 4].try_into().unwrap())
                as f64
        };
        positions.push([at(0), at(1), at(2)]);
    }

    let labels = match label_path {
        None => None,
        Some(path) => {
            let raw = std::fs::read(path)?;
            if raw.len() % 4 != 0 {
                return Err(Error::Parse {
                    offset: (raw.len() - raw.len() % 4) as u64,
                    message: format!("label file size {} is not a multiple of 4", raw.len()),
                });
            }
            if raw.len() / 4 != n {
                return Err(Error::Data(format!(
                    "{} labels for {} points",
                    raw.len() / 4,
                    n
                )));
            }
            Some(
                raw.chunks_exact(4)
                    .map(|c| {
                        let v = u32::from_le_bytes(c.try_into().unwrap());
                        classes.map_raw((v & 0xFFFF) as u16)
                    })
                    .collect(),
            )
        }
    };

    Ok(PointCloud {
        positions,
        // the velodyne frame is sensor-centered
        sensor_origin: [0.0, 0.0, 0.0],
        labels,
        domain: Domain::Source,
        frame_id: 0,
    })
}
