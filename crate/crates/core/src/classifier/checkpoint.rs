//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! b"RAGATCKP"  u32 version
//! u32 len, run config JSON
//! u32 len, vocabulary path (UTF-8, may be empty)
//! u64 vocab size
//! u32 tensor count
//! per tensor: u32 len, name; u32 ndim; u64 dims...; f64 data...
//! ```

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

use super::{Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"RAGATCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub vocab_path: String,
    pub model: Model,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(run: &RunConfig, vocab_path: &str, model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &run.to_json());
    put_str(&mut out, vocab_path);
    out.extend_from_slice(&(model.config.vocab_size as u64).to_le_bytes());
    let entries = model.params.entries();
    put_u32(&mut out, entries.len());
    for (name, t) in entries {
        put_str(&mut out, &name);
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} too large")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Parses a checkpoint and checks every stored tensor against the shapes the
/// stored configuration implies.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let run = RunConfig::from_json(&r.str()?).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let vocab_path = r.str()?;
    let vocab_size = r.u64()?;
    let config = ModelConfig::from_run(&run, vocab_size);
    let mut model = Model::new(config, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()?;
    let mut slots = model.params.entries_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, configuration expects {}",
            slots.len()
        )));
    }
    for (expected, slot) in slots.iter_mut() {
        let name = r.str()?;
        if &name != expected {
            return Err(Error::Checkpoint(format!("found tensor {name}, expected {expected}")));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if shape != slot.shape() {
            return Err(Error::Dimension(format!(
                "{name}: stored shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        let raw = r.take(slot.numel().checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        **slot = Tensor::new(shape, data)?.with_requires_grad(true);
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { run, vocab_path, model })
}

pub fn save(path: &Path, run: &RunConfig, vocab_path: &str, model: &Model) -> Result<()> {
    fs::write(path, encode(run, vocab_path, model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
