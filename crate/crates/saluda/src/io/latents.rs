//! CSV dump of per-point latent codes, for offline probing (e.g. t-SNE or
//! linear probes against labels).

use crate::error::Result;
use crate::geom::cloud::PointCloud;
use crate::geom::voxel::voxel_downsample;
use crate::model::features::prepare_geometry;
use crate::model::forward::backbone_on_geometry;
use crate::model::state::NetworkState;
use crate::nn::batchnorm::BnMode;
use std::io::Write;
use std::path::Path;

/// One row per representative point: frame id, label (or the ignore id when
/// unlabeled), then the latent coordinates.
pub fn dump_latents(
    net: &mut NetworkState,
    frames: &[PointCloud],
    voxel_size: f64,
    ignore_id: u16,
    path: &Path,
) -> Result<u64> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = net.config.latent_dim;
    write!(out, "frame,label")?;
    for k in 0..d {
        write!(out, ",z{k}")?;
    }
    writeln!(out)?;
    let mut rows = 0;
    for frame in frames {
        let (down, _) = voxel_downsample(frame, voxel_size)?;
        let geometry = prepare_geometry(&down, &net.config)?;
        let latents =
            backbone_on_geometry(net, &geometry, frame.frame_id, BnMode::EvalFrozen)?;
        for i in 0..down.len() {
            let label = down.labels.as_ref().map_or(ignore_id, |l| l[i]);
            write!(out, "{},{}", frame.frame_id, label)?;
            for k in 0..d {
                write!(out, ",{}", latents.values.data()[i * d + k])?;
            }
            writeln!(out)?;
            rows += 1;
        }
    }
    out.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::state::ModelConfig;
    use crate::train::dataset::blob_cloud;

    #[test]
    fn dump_has_one_row_per_representative() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.csv");
        let config = ModelConfig {
            latent_dim: 6,
            class_count: 2,
            block_widths: vec![8],
            block_radii: vec![0.9],
            ..ModelConfig::default()
        };
        let frames = vec![blob_cloud(150, 0, 1), blob_cloud(130, 1, 2)];
        let mut net = NetworkState::init(config, 0).unwrap();
        let rows = dump_latents(&mut net, &frames, 0.4, u16::MAX, &path).unwrap();

        let expected: usize = frames
            .iter()
            .map(|f| voxel_downsample(f, 0.4).unwrap().0.len())
            .sum();
        assert_eq!(rows as usize, expected);

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame,label,z0,z1,z2,z3,z4,z5");
        assert_eq!(lines.len(), 1 + expected);
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 2 + 6);
            let fields: Vec<&str> = line.split(',').collect();
            assert!(fields[2..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
        }
    }

    #[test]
    fn unlabeled_frames_dump_the_ignore_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.csv");
        let mut frame = blob_cloud(80, 3, 9);
        frame.labels = None;
        let config = ModelConfig {
            latent_dim: 4,
            class_count: 2,
            block_widths: vec![8],
            block_radii: vec![0.9],
            ..ModelConfig::default()
        };
        let mut net = NetworkState::init(config, 0).unwrap();
        dump_latents(&mut net, &[frame], 0.4, 65535, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').nth(1), Some("65535"));
        }
    }
}
