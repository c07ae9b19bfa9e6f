//! Binary parameter checkpoints.
//!
//! Layout (little-endian): `u8 version`, `u8 scalar width`, `u32 count`, then per
//! parameter `u32 name_len`, name bytes, `u32 rank`, `u64` dims; then every
//! parameter's raw buffer in table order.

use std::fs;
use std::path::Path;

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint<S: Scalar>(store: &ParamStore<S>) -> Vec<u8> {
    let mut out = vec![CHECKPOINT_VERSION, S::WIDTH];
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, p) in store.iter() {
        for &v in p.tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NumericsError::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<ParamStore<S>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let head = r.take(2)?;
    if head[0] != CHECKPOINT_VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported version {}",
            head[0]
        )));
    }
    if head[1] != S::WIDTH {
        return Err(NumericsError::Checkpoint(format!(
            "scalar width {} does not match requested {}",
            head[1],
            S::WIDTH
        )));
    }
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| NumericsError::Checkpoint(format!("bad name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let width = S::WIDTH as usize;
    let mut store = ParamStore::new();
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let raw = r.take(n * width)?;
        let data = raw.chunks(width).map(S::read_le).collect();
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(NumericsError::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

pub fn save_checkpoint<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ParamStore<S>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;

    #[test]
    fn header_starts_with_version_byte() {
        let mut store = ParamStore::new();
        store.add("a.b", Tensor::matrix(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap());
        let bytes = encode_checkpoint(&store);
        assert_eq!(bytes[0], CHECKPOINT_VERSION);
        assert_eq!(bytes[1], 4);
        let back: ParamStore<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.name(ParamId(0)), "a.b");
        assert_eq!(back.get(ParamId(0)), store.get(ParamId(0)));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(1.0f32));
        let bytes = encode_checkpoint(&store);
        assert!(decode_checkpoint::<f64>(&bytes).is_err());
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }
}
