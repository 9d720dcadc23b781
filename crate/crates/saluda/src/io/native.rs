//! Native point-cloud container: a little-endian binary with an "SLPC"
//! magic, positions in f32, and optional u16 labels.
//!
//! Layout: magic (4 bytes) | version u32 | count u64 | sensor origin 3xf32
//! | flags u32 (bit 0: labels present) | count * 3 f32 positions
//! | count * u16 labels if flagged.

use crate::error::{Error, Result};
use crate::geom::cloud::{Domain, PointCloud};
use std::path::Path;

pub const CLOUD_MAGIC: &[u8; 4] = b"SLPC";
pub const CLOUD_VERSION: u32 = 1;
const FLAG_LABELS: u32 = 1;

pub fn write_cloud(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(24 + n * 14);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in cloud.sensor_origin {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let flags = if cloud.labels.is_some() { FLAG_LABELS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for p in &cloud.positions {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(labels) = &cloud.labels {
        for &l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, write_cloud(cloud))?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parse a cloud; the caller assigns the domain and frame id, which are
/// bookkeeping outside the container.
pub fn parse_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != CLOUD_MAGIC {
        return Err(Error::Parse { offset: 0, message: "bad magic, expected SLPC".into() });
    }
    let version = cur.u32("version")?;
    if version != CLOUD_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = cur.u64("point count")?;
    let origin = [
        cur.f32("origin x")? as f64,
        cur.f32("origin y")? as f64,
        cur.f32("origin z")? as f64,
    ];
    let flags_at = cur.pos;
    let flags = cur.u32("flags")?;
    if flags & !FLAG_LABELS != 0 {
        return Err(Error::Parse {
            offset: flags_at as u64,
            message: format!("unknown flag bits {flags:#x}"),
        });
    }
    let has_labels = flags & FLAG_LABELS != 0;

    // size check before any allocation
    let need = (count as usize)
        .checked_mul(12 + if has_labels { 2 } else { 0 })
        .ok_or(Error::Parse { offset: 8, message: "point count overflows".into() })?;
    let remaining = bytes.len() - cur.pos;
    if remaining != need {
        return Err(Error::Parse {
            offset: cur.pos as u64,
            message: format!("expected {need} payload bytes, found {remaining}"),
        });
    }

    let mut positions = Vec::with_capacity(count as usize);
    for _ in 0..count {
        positions.push([
            cur.f32("position")? as f64,
            cur.f32("position")? as f64,
            cur.f32("position")? as f64,
        ]);
    }
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(count as usize);
        for _ in 0..count {
            labels.push(u16::from_le_bytes(cur.take(2, "label")?.try_into().unwrap()));
        }
        Some(labels)
    } else {
        None
    };
    Ok(PointCloud {
        positions,
        sensor_origin: origin,
        labels,
        domain: Domain::Source,
        frame_id: 0,
    })
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    parse_cloud(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn f32_cloud(n: usize, labeled: bool, seed: u64) -> PointCloud {
        // positions representable exactly in f32, so a round trip can be
        // compared with ==
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| {
                [
                    rng.gen_range(-100.0f32..100.0) as f64,
                    rng.gen_range(-100.0f32..100.0) as f64,
                    rng.gen_range(-5.0f32..5.0) as f64,
                ]
            })
            .collect();
        PointCloud {
            positions,
            sensor_origin: [0.5, -1.25, 1.75],
            labels: labeled.then(|| (0..n).map(|i| (i % 7) as u16).collect()),
            domain: Domain::Source,
            frame_id: 0,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        for labeled in [false, true] {
            let cloud = f32_cloud(257, labeled, 3);
            let parsed = parse_cloud(&write_cloud(&cloud)).unwrap();
            assert_eq!(parsed.positions, cloud.positions);
            assert_eq!(parsed.labels, cloud.labels);
            assert_eq!(parsed.sensor_origin, cloud.sensor_origin);
        }
    }

    #[test]
    fn double_round_trip_is_byte_stable() {
        let cloud = f32_cloud(64, true, 4);
        let once = write_cloud(&cloud);
        let twice = write_cloud(&parse_cloud(&once).unwrap());
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_cloud_round_trips() {
        let cloud = PointCloud {
            positions: vec![],
            sensor_origin: [0.0; 3],
            labels: Some(vec![]),
            domain: Domain::Target,
            frame_id: 0,
        };
        let parsed = parse_cloud(&write_cloud(&cloud)).unwrap();
        assert_eq!(parsed.len(), 0);
        assert_eq!(parsed.labels, Some(vec![]));
    }

    #[test]
    fn corrupt_headers_are_rejected_with_offsets() {
        let err = parse_cloud(b"SLP?rest").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));

        let mut bytes = write_cloud(&f32_cloud(4, true, 5));
        bytes[4] = 9; // version
        assert!(matches!(parse_cloud(&bytes).unwrap_err(), Error::Parse { offset: 4, .. }));

        let mut bytes = write_cloud(&f32_cloud(4, true, 5));
        bytes[28] = 0xff; // flags sit after magic + version + count + origin
        assert!(matches!(parse_cloud(&bytes).unwrap_err(), Error::Parse { offset: 28, .. }));
    }

    #[test]
    fn size_mismatches_are_rejected_before_allocation() {
        // a count claiming far more points than the payload holds
        let mut bytes = write_cloud(&f32_cloud(4, false, 6));
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(parse_cloud(&bytes).is_err());

        // truncated payload
        let full = write_cloud(&f32_cloud(50, true, 7));
        for cut in [full.len() - 1, full.len() - 13, 30, 11, 3] {
            assert!(parse_cloud(&full[..cut]).is_err(), "cut at {cut} must fail");
        }

        // trailing garbage
        let mut padded = full.clone();
        padded.push(0);
        assert!(parse_cloud(&padded).is_err());
    }

    #[test]
    fn random_bytes_never_panic() {
        let mut rng = ChaCha20Rng::seed_from_u64(0xF00D);
        for _ in 0..500 {
            let len = rng.gen_range(0..200);
            let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let _ = parse_cloud(&bytes);
            // and with a valid magic so parsing gets further
            if bytes.len() >= 4 {
                bytes[..4].copy_from_slice(CLOUD_MAGIC);
                let _ = parse_cloud(&bytes);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.slpc");
        let cloud = f32_cloud(33, true, 8);
        save_cloud(&cloud, &path).unwrap();
        let loaded = load_cloud(&path).unwrap();
        assert_eq!(loaded.positions, cloud.positions);
        assert_eq!(loaded.labels, cloud.labels);
    }
}
