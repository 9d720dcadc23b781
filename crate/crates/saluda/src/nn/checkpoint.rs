//! Checkpoint serialization: a flat list of named f64 tensors in a small
//! little-endian binary format.
//!
//! Layout: magic `SALW`, format version (u32), tensor count (u32), then per
//! tensor: name length (u32) + UTF-8 name, rank (u32), extents (u64 each),
//! values (f64 each). Loaders validate every declared size against the bytes
//! actually present before allocating.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SALW";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_RANK: u32 = 8;
const MAX_NAME_LEN: u32 = 4096;

pub fn write_checkpoint<'a, W, I>(out: &mut W, entries: I) -> Result<()>
where
    W: Write,
    I: ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
{
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &e in tensor.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint<'a, I>(path: &Path, entries: I) -> Result<()>
where
    I: ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
{
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, entries)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "unexpected end of data while reading {what} ({n} bytes needed, {} left)",
                self.bytes.len() - self.pos
            )));
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
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic {magic:02x?}, expected \"SALW\""),
        });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let count = cur.u32("tensor count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = cur.u32("name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(cur.err(format!("tensor name length {name_len} exceeds limit")));
        }
        let name_bytes = cur.take(name_len as usize, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| cur.err("tensor name is not valid UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")?;
        if rank > MAX_RANK {
            return Err(cur.err(format!("rank {rank} exceeds limit {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let e = cur.u64("extent")?;
            numel = numel
                .checked_mul(e)
                .ok_or_else(|| cur.err("extent product overflows"))?;
            shape.push(e as usize);
        }
        // size check before any allocation: the declared payload must fit
        let need = numel
            .checked_mul(8)
            .ok_or_else(|| cur.err("value payload overflows"))?;
        if need > (bytes.len() - cur.pos) as u64 {
            return Err(cur.err(format!(
                "tensor '{name}' declares {numel} values but only {} bytes remain",
                bytes.len() - cur.pos
            )));
        }
        let raw = cur.take(need as usize, "tensor values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(cur.err(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(entries)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    parse_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("enc.w".to_string(), Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 4.0, 5.0, 6.0]).unwrap()),
            ("enc.b".to_string(), Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap()),
            ("meta.radius".to_string(), Tensor::scalar(0.5)),
        ]
    }

    fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, entries.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        buf
    }

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let entries = sample();
        let decoded = parse_checkpoint(&encode(&entries)).unwrap();
        assert_eq!(decoded.len(), entries.len());
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&decoded) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert_eq!(t0.data(), t1.data());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = encode(&sample());
        buf[0] = b'X';
        let err = parse_checkpoint(&buf).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn truncation_reports_offset() {
        let buf = encode(&sample());
        let err = parse_checkpoint(&buf[..buf.len() - 3]).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert!(offset > 0 && offset < buf.len() as u64),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn huge_declared_tensor_fails_before_allocation() {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.push(b'w');
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&u64::MAX.to_le_bytes()); // absurd extent
        let err = parse_checkpoint(&buf).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut buf = encode(&sample());
        buf.push(0);
        assert!(parse_checkpoint(&buf).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.salw");
        let entries = sample();
        save_checkpoint(&path, entries.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        let decoded = load_checkpoint(&path).unwrap();
        assert_eq!(decoded[2].0, "meta.radius");
        assert_eq!(decoded[2].1.data(), &[0.5]);
    }
}
