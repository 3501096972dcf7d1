//! On-disk clip feature cache.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "ASCFEAT\0"
//! version   u32      1
//! fp_len    u32      length of the fingerprint string
//! fp        fp_len   FeatureConfig fingerprint (ASCII hex)
//! shape     3 x u32  channels, n_mels, frames
//! payload   f32 x channels*n_mels*frames, row-major
//! ```

use std::path::{Path, PathBuf};

use super::{hex_digest, LogMelTensor};
use crate::error::{Error, Result};
use crate::fsutil;

const MAGIC: &[u8; 8] = b"ASCFEAT\0";
const VERSION: u32 = 1;

/// Cache file for `clip_key` (typically the clip path as written in the manifest).
pub fn cache_path(dir: &Path, clip_key: &str) -> PathBuf {
    dir.join(format!("{}.feat", &hex_digest(clip_key.as_bytes())[..24]))
}

pub fn store_cached(path: &Path, tensor: &LogMelTensor<f32>, fingerprint: &str) -> Result<()> {
    let mut out = Vec::with_capacity(8 + 8 + fingerprint.len() + 12 + tensor.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(fingerprint.len() as u32).to_le_bytes());
    out.extend_from_slice(fingerprint.as_bytes());
    for d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in tensor.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fsutil::write_atomic(path, &out)
}

/// `Ok(None)` when the file is absent or was written under a different
/// fingerprint; an error when it exists but is corrupt.
pub fn load_cached(path: &Path, fingerprint: &str) -> Result<Option<LogMelTensor<f32>>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fsutil::read(path)?;
    let corrupt = |why: &str| Error::Cache(format!("{}: {why}", path.display()));
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8).ok_or_else(|| corrupt("short header"))? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32().ok_or_else(|| corrupt("short header"))?;
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let fp_len = r.u32().ok_or_else(|| corrupt("short header"))? as usize;
    let fp = r.take(fp_len).ok_or_else(|| corrupt("short fingerprint"))?;
    if fp != fingerprint.as_bytes() {
        return Ok(None);
    }
    let mut shape = [0usize; 3];
    for d in &mut shape {
        *d = r.u32().ok_or_else(|| corrupt("short shape header"))? as usize;
    }
    let n: usize = shape.iter().product();
    let payload = &bytes[r.pos..];
    if payload.len() != n * 4 {
        return Err(corrupt(&format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LogMelTensor::new(shape, data).map(Some)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Directory-backed cache bound to one feature configuration.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
    fingerprint: String,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, fingerprint: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            fingerprint: fingerprint.into(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get_or_compute(
        &self,
        clip_key: &str,
        compute: impl FnOnce() -> Result<LogMelTensor<f32>>,
    ) -> Result<LogMelTensor<f32>> {
        let path = cache_path(&self.dir, clip_key);
        if let Some(hit) = load_cached(&path, &self.fingerprint)? {
            return Ok(hit);
        }
        let fresh = compute()?;
        store_cached(&path, &fresh, &self.fingerprint)?;
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_fingerprint_miss() {
        let dir = tempfile::tempdir().unwrap();
        let t = LogMelTensor::new([3, 2, 3], (0..18).map(|i| i as f32 * -0.5).collect()).unwrap();
        let p = cache_path(dir.path(), "audio/a.wav");
        store_cached(&p, &t, "abc").unwrap();
        assert_eq!(load_cached(&p, "abc").unwrap(), Some(t.clone()));
        assert_eq!(load_cached(&p, "abd").unwrap(), None);
        assert_eq!(load_cached(&dir.path().join("nope"), "abc").unwrap(), None);

        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_cached(&p, "abc"), Err(Error::Cache(_))));
    }

    #[test]
    fn get_or_compute_only_computes_on_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path(), "fp");
        let t = LogMelTensor::new([1, 1, 2], vec![1.0f32, 2.0]).unwrap();
        let a = cache.get_or_compute("k", || Ok(t.clone())).unwrap();
        let b = cache
            .get_or_compute("k", || panic!("should hit the cache"))
            .unwrap();
        assert_eq!(a, b);
    }
}
