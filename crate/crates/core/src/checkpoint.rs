//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SLRNCKPT"
//! version  u32      1
//! count    u32      number of tensors
//! count x { name_len u32, name utf-8, rank u32, dims rank x u64 }
//! data     f64 values of every tensor in table order, row-major
//! ```
//!
//! The file must end exactly after the data.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SLRNCKPT";
pub const VERSION: u32 = 1;

const MAX_RANK: usize = 8;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in store.iter() {
        for v in t.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Decodes a checkpoint into named tensors, rejecting anything malformed.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut table = Vec::new();
    let mut total: usize = 0;
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} name is not utf-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64("dimension")?)
                .map_err(|_| Error::Checkpoint(format!("dimension of `{name}` overflows")))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Checkpoint(format!("size of `{name}` overflows")))?;
            shape.push(d);
        }
        total = total
            .checked_add(numel)
            .ok_or_else(|| Error::Checkpoint("total size overflows".into()))?;
        table.push((name, shape, numel));
    }
    let expect = total
        .checked_mul(8)
        .ok_or_else(|| Error::Checkpoint("total size overflows".into()))?;
    if r.remaining() != expect {
        return Err(Error::Checkpoint(format!(
            "expected {expect} data bytes, found {}",
            r.remaining()
        )));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, shape, numel) in table {
        let raw = r.take(numel * 8, "data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` holds non-finite values")));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

/// Decodes `bytes` into `store`, which must have the same layout.
pub fn load_into(store: &mut ParamStore, bytes: &[u8]) -> Result<()> {
    store.load(decode(bytes)?)
}
