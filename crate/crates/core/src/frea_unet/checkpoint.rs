//! Binary model checkpoints.
//!
//! Layout (little-endian): `FREAM1`, `u32` length plus `key=value` config
//! lines, `u32` tensor count, then per tensor `u32` rank, `u32` dims and
//! `f64` data, then `u32` norm-layer count and per layer `u32` width,
//! running means and running variances as `f64`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::FreaUnetModel;
use crate::error::{FreaError, Result};
use crate::tensor::{BatchNormStats, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"FREAM1";

pub fn to_bytes(model: &FreaUnetModel) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let text: String = model
        .config()
        .to_pairs()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, model.params().len());
    for t in model.params() {
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        put_f64s(&mut out, t.data());
    }
    put_u32(&mut out, model.bn_stats().len());
    for s in model.bn_stats() {
        put_u32(&mut out, s.mean.len());
        put_f64s(&mut out, &s.mean);
        put_f64s(&mut out, &s.var);
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<FreaUnetModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(FreaError::format("checkpoint", "bad magic"));
    }
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|_| FreaError::format("checkpoint", "config text is not UTF-8"))?;
    let mut config = ModelConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FreaError::format("checkpoint", format!("bad config line {line:?}")))?;
        if !config.set(k.trim(), v)? {
            return Err(FreaError::format("checkpoint", format!("unknown config key {k:?}")));
        }
    }
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FreaError::format("checkpoint", "tensor size overflows"))?;
        params.push(Tensor::new(shape, r.f64s(n)?)?);
    }
    let layers = r.u32()?;
    let mut stats = Vec::with_capacity(layers.min(1024));
    for _ in 0..layers {
        let c = r.u32()?;
        let mean = r.f64s(c)?;
        let var = r.f64s(c)?;
        stats.push(BatchNormStats { mean, var });
    }
    if r.pos != bytes.len() {
        return Err(FreaError::format("checkpoint", "trailing bytes"));
    }
    FreaUnetModel::from_parts(config, params, stats)
}

pub fn save(model: &FreaUnetModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| FreaError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<FreaUnetModel> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| FreaError::io(path, e))?)
}

/// Hex SHA-256 of `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
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
            .ok_or_else(|| FreaError::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| FreaError::format("checkpoint", "truncated"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}
