use std::path::Path;

use crate::container::{self, VOLUME_MAGIC};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes one channel as a single `MPVV` record named after the channel.
pub fn write_volume(path: &Path, channel: &str, volume: &Tensor<f64>) -> Result<()> {
    container::write(path, VOLUME_MAGIC, &[(channel, volume)])
}

/// Reads a single-channel volume file, returning the channel name and its
/// `[H, W, D]` data.
pub fn read_volume(path: &Path) -> Result<(String, Tensor<f64>)> {
    let mut records = container::read(path, VOLUME_MAGIC)?;
    if records.len() != 1 || records[0].1.rank() != 3 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "expected exactly one rank-3 volume record".into(),
        });
    }
    Ok(records.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mpvv");
        let v = Tensor::new(vec![2, 1, 3], vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0]).unwrap();
        write_volume(&p, "FLAIR", &v).unwrap();
        let (name, back) = read_volume(&p).unwrap();
        assert_eq!(name, "FLAIR");
        assert_eq!(back, v);
        assert_eq!(&std::fs::read(&p).unwrap()[..4], b"MPVV");
    }
}
