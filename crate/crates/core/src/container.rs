//! Binary tensor container shared by checkpoints (`MPVT`) and volume files
//! (`MPVV`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     4 bytes
//! version   u32
//! record*   path_len u32 | path (UTF-8) | rank u32 | dims u64 × rank | values f64 × Π dims
//! ```
//!
//! Records run to end of file and are written in sorted path order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MPVT";
pub const VOLUME_MAGIC: [u8; 4] = *b"MPVV";

pub fn encode(magic: [u8; 4], records: &[(&str, &Tensor<f64>)]) -> Vec<u8> {
    let mut sorted: Vec<_> = records.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (path, t) in sorted {
        out.extend_from_slice(&(path.len() as u32).to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(magic: [u8; 4], bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = Reader { buf: bytes, pos: 0 };
    match r.take(4) {
        Some(m) if m == magic => {}
        _ => {
            return Err(bad(&format!(
                "bad magic (expected {:?})",
                String::from_utf8_lossy(&magic)
            )))
        }
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32().ok_or_else(|| bad("truncated record"))? as usize;
        let name = r.take(len).ok_or_else(|| bad("truncated path"))?;
        let name = std::str::from_utf8(name).map_err(|_| bad("path is not UTF-8"))?;
        let rank = r.u32().ok_or_else(|| bad("truncated rank"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64().ok_or_else(|| bad("truncated dims"))? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension overflow"))?;
        let raw = r
            .take(numel.checked_mul(8).ok_or_else(|| bad("dimension overflow"))?)
            .ok_or_else(|| bad("truncated values"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| bad(&e.to_string()))?;
        records.push((name.to_string(), t));
    }
    Ok(records)
}

pub fn write(path: &Path, magic: [u8; 4], records: &[(&str, &Tensor<f64>)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(magic, records))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, magic: [u8; 4]) -> Result<Vec<(String, Tensor<f64>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(magic, &bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes() {
        let t = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(CHECKPOINT_MAGIC, &[("w", &t)]);
        assert_eq!(&bytes[..4], b"MPVT");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(bytes[12], b'w');
        assert_eq!(&bytes[13..17], &[1, 0, 0, 0]);
        assert_eq!(&bytes[17..25], &2u64.to_le_bytes());
        assert_eq!(&bytes[25..33], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 41);
    }

    #[test]
    fn records_sorted_and_decoded() {
        let a = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::scalar(5.0);
        let bytes = encode(VOLUME_MAGIC, &[("z", &b), ("a", &a)]);
        let recs = decode(VOLUME_MAGIC, &bytes, Path::new("mem")).unwrap();
        assert_eq!(recs[0], ("a".to_string(), a));
        assert_eq!(recs[1], ("z".to_string(), b));
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let t = Tensor::scalar(1.0);
        let bytes = encode(CHECKPOINT_MAGIC, &[("w", &t)]);
        let p = Path::new("mem");
        assert!(decode(VOLUME_MAGIC, &bytes, p).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode(CHECKPOINT_MAGIC, &v2, p).is_err());
        assert!(decode(CHECKPOINT_MAGIC, &bytes[..bytes.len() - 1], p).is_err());
    }
}
