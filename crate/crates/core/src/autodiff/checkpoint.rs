//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes  "SCKP"
//! version  u32      currently 1
//! flags    u32      bit 0: optimizer state present
//! count    u32      number of entries
//! entry*   name_len u32, name (UTF-8), kind u8 (0 parameter, 1 buffer),
//!          ndim u32, dims u64 * ndim, values f64 * product(dims)
//!          [if optimizer state: step u64, m f64 * n, v f64 * n]
//! ```
//!
//! Entries are written in name order, so equal stores serialize to equal bytes.

use std::path::Path;

use super::params::Param;
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ParamStore {
    pub fn to_bytes(&self, with_optimizer: bool) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(with_optimizer as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, p) in self.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(if p.trainable { 0 } else { 1 });
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for d in p.value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            p.value.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            if with_optimizer {
                out.extend_from_slice(&p.step.to_le_bytes());
                p.m.iter().chain(&p.v).for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let with_optimizer = r.u32()? & 1 == 1;
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_string();
            let trainable = match r.take(1)?[0] {
                0 => true,
                1 => false,
                k => return Err(format!("entry {name}: unknown kind {k}")),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = r.f64s(n)?;
            let value = Tensor::new(shape, data).map_err(|e| format!("entry {name}: {e}"))?;
            let mut p = Param { grad: None, m: vec![0.0; n], v: vec![0.0; n], step: 0, trainable, value };
            if with_optimizer {
                p.step = r.u64()?;
                p.m = r.f64s(n)?;
                p.v = r.f64s(n)?;
            }
            store.insert(&name, p).map_err(|e| e.to_string())?;
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("oversized entry")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn save_store(store: &ParamStore, path: &Path, with_optimizer: bool) -> Result<()> {
    std::fs::write(path, store.to_bytes(with_optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load_store(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ParamStore::from_bytes(&bytes).map_err(|msg| Error::format(path, 0, msg))
}
