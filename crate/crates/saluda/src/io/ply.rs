//! ASCII PLY exports for eyeballing clouds, predictions, and occupancy
//! queries in any standard viewer.

use crate::error::{Error, Result};
use crate::geom::cloud::PointCloud;
use crate::queries::QuerySet;
use std::io::Write;
use std::path::Path;

/// Repeating class palette (RGB), chosen for contrast between neighbors.
pub const CLASS_PALETTE: [[u8; 3]; 10] = [
    [128, 128, 128], // 0: gray
    [214, 39, 40],   // 1: red
    [31, 119, 180],  // 2: blue
    [255, 127, 14],  // 3: orange
    [44, 160, 44],   // 4: green
    [148, 103, 189], // 5: purple
    [227, 119, 194], // 6: pink
    [188, 189, 34],  // 7: olive
    [23, 190, 207],  // 8: cyan
    [140, 86, 75],   // 9: brown
];

const IGNORE_COLOR: [u8; 3] = [0, 0, 0];
/// Occupancy palette: empty space blue, occupied red.
pub const FREE_COLOR: [u8; 3] = [40, 80, 255];
pub const OCCUPIED_COLOR: [u8; 3] = [255, 40, 40];

pub fn class_color(label: u16, ignore_id: u16) -> [u8; 3] {
    if label == ignore_id {
        IGNORE_COLOR
    } else {
        CLASS_PALETTE[label as usize % CLASS_PALETTE.len()]
    }
}

pub fn write_ply(
    path: &Path,
    positions: &[[f64; 3]],
    colors: &[[u8; 3]],
) -> Result<()> {
    if positions.len() != colors.len() {
        return Err(Error::Dimension(format!(
            "{} positions for {} colors",
            positions.len(),
            colors.len()
        )));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", positions.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}")?;
    }
    for channel in ["red", "green", "blue"] {
        writeln!(out, "property uchar {channel}")?;
    }
    writeln!(out, "end_header")?;
    for (p, c) in positions.iter().zip(colors) {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            p[0] as f32, p[1] as f32, p[2] as f32, c[0], c[1], c[2]
        )?;
    }
    Ok(out.flush()?)
}

/// Cloud colored by the given per-point labels (predictions or ground
/// truth).
pub fn export_labeled_cloud(
    path: &Path,
    cloud: &PointCloud,
    labels: &[u16],
    ignore_id: u16,
) -> Result<()> {
    if labels.len() != cloud.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} points",
            labels.len(),
            cloud.len()
        )));
    }
    let colors: Vec<[u8; 3]> = labels.iter().map(|&l| class_color(l, ignore_id)).collect();
    write_ply(path, &cloud.positions, &colors)
}

/// Query positions colored by occupancy label.
pub fn export_queries(path: &Path, queries: &QuerySet) -> Result<()> {
    let positions: Vec<[f64; 3]> = queries.queries.iter().map(|q| q.position).collect();
    let colors: Vec<[u8; 3]> = queries
        .queries
        .iter()
        .map(|q| if q.occupancy_label == 0 { FREE_COLOR } else { OCCUPIED_COLOR })
        .collect();
    write_ply(path, &positions, &colors)
}
