//! Binary model checkpoints.
//!
//! Layout (little endian): magic, `u32` version, length-prefixed spec
//! fingerprint, length-prefixed JSON metadata (spec, seed, caller extras),
//! norm statistics, then for every layer its parameter tensors followed by
//! any running statistics, each as `u32` rank, `u32` dims and `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LayerState, ModelState, Param};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::fsutil;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"ASCNCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: NetworkSpec,
    seed: u64,
    extra: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, shape: &[usize], values: &[T]) {
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
    for v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn checkpoint_bytes<T: Scalar>(model: &ModelState<T>, extra: &serde_json::Value) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, model.fingerprint().len());
    out.extend_from_slice(model.fingerprint().as_bytes());
    let meta = serde_json::to_vec(&Meta {
        spec: model.spec().clone(),
        seed: model.seed(),
        extra: extra.clone(),
    })
    .expect("metadata serializes");
    put_u32(&mut out, meta.len());
    out.extend_from_slice(&meta);
    let ns = model.norm_stats();
    let shape = [ns.channels(), ns.n_mels()];
    put_tensor(&mut out, &shape, ns.mean());
    put_tensor(&mut out, &shape, ns.std());
    for layer in model.layers() {
        for p in &layer.params {
            put_tensor(&mut out, &p.shape, &p.values);
        }
        if !layer.running_mean.is_empty() {
            put_tensor(&mut out, &[layer.running_mean.len()], &layer.running_mean);
            put_tensor(&mut out, &[layer.running_var.len()], &layer.running_var);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn tensor<T: Scalar>(&mut self, want: &[usize], what: &str) -> Result<Vec<T>> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        if shape != want {
            return Err(Error::Checkpoint(format!(
                "{what}: expected shape {want:?}, found {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect())
    }
}

/// Parses a checkpoint; returns the model and the caller metadata.
pub fn checkpoint_from_bytes<T: Scalar>(
    bytes: &[u8],
) -> Result<(ModelState<T>, serde_json::Value)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let fp_len = r.u32()?;
    let fingerprint = String::from_utf8(r.take(fp_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("fingerprint is not utf-8".into()))?;
    let meta_len = r.u32()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let actual = meta.spec.fingerprint();
    if actual != fingerprint {
        return Err(Error::Fingerprint {
            expected: fingerprint,
            found: actual,
        });
    }
    meta.spec.shape_check()?;
    let [c, m, _] = meta.spec.input_shape;
    let mean = r.tensor(&[c, m], "norm mean")?;
    let std = r.tensor(&[c, m], "norm std")?;
    let norm = NormStats::new(c, m, mean, std)?;
    let mut layers = Vec::with_capacity(meta.spec.layers.len());
    for (i, layer) in meta.spec.layers.iter().enumerate() {
        let what = format!("layer {i} ({})", layer.kind());
        let params = layer
            .params()
            .into_iter()
            .map(|p| {
                Ok(Param {
                    values: r.tensor(&p.shape, &what)?,
                    shape: p.shape,
                    decay: p.decay,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (running_mean, running_var) = match layer {
            super::LayerSpec::BatchNorm { channels } => (
                r.tensor(&[*channels], &what)?,
                r.tensor(&[*channels], &what)?,
            ),
            _ => (Vec::new(), Vec::new()),
        };
        layers.push(LayerState {
            params,
            running_mean,
            running_var,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok((
        ModelState::from_parts(meta.spec, layers, norm, meta.seed)?,
        meta.extra,
    ))
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &ModelState<T>,
    extra: &serde_json::Value,
) -> Result<()> {
    fsutil::write_atomic(path, &checkpoint_bytes(model, extra))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelState<T>, serde_json::Value)> {
    checkpoint_from_bytes(&fsutil::read(path)?)
}
