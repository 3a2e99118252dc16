//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//! `magic[8] "LE" count:u64`, then per tensor `name_len:u32 name rows:u64
//! cols:u64`, then every tensor's `rows * cols` f64 values in row-major
//! order, in table order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HGNNPAR1";
const ENDIAN_TAG: &[u8; 2] = b"LE";

/// Serialises named tensors.
pub fn write_checkpoint(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(ENDIAN_TAG);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
    }
    for (_, t) in tensors {
        for &x in t.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Data(format!("checkpoint size field {v} too large")))
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a parameter checkpoint (bad magic)".into()));
    }
    if r.take(2)? != ENDIAN_TAG {
        return Err(Error::Data("unsupported checkpoint endianness tag".into()));
    }
    let count = r.u64()?;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Data("checkpoint tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()?;
        let cols = r.u64()?;
        table.push((name, rows, cols));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, rows, cols) in table {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Data(format!("checkpoint tensor {name} has overflowing shape")))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Data("checkpoint too large".into()))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((
            name,
            Tensor::from_shape_vec((rows, cols), data).expect("length matches shape"),
        ));
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save_params(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let tensors: Vec<(&str, &Tensor)> = store.ids().map(|id| (store.name(id), store.value(id))).collect();
    let path = path.as_ref();
    fs::write(path, write_checkpoint(&tensors)).map_err(|e| Error::io(path, e))
}

/// Overwrites every parameter of `store` with the same-named checkpoint tensor.
pub fn load_params(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_checkpoint(&bytes)?;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let (_, t) = tensors
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))?;
        if t.dim() != store.value(id).dim() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint tensor `{name}` is {:?}, model expects {:?}",
                t.dim(),
                store.value(id).dim()
            )));
        }
        *store.value_mut(id) = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_bitwise() {
        let a = array![[1.0, -0.0, f64::MIN_POSITIVE], [1e300, 0.1, -7.25]];
        let b = array![[3.0]];
        let bytes = write_checkpoint(&[("a", &a), ("b.w", &b)]);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back[0].0, "a");
        assert_eq!(back[1].0, "b.w");
        for (x, y) in back[0].1.iter().zip(a.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = write_checkpoint(&[("a", &array![[1.0, 2.0]])]);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
    }

    #[test]
    fn load_checks_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut s = ParamStore::new();
        s.add("w", array![[1.0, 2.0]]);
        save_params(&s, &path).unwrap();
        let mut other = ParamStore::new();
        other.add("w", array![[1.0], [2.0]]);
        assert!(load_params(&mut other, &path).is_err());
        let mut same = ParamStore::new();
        let id = same.add("w", array![[0.0, 0.0]]);
        load_params(&mut same, &path).unwrap();
        assert_eq!(same.value(id), &array![[1.0, 2.0]]);
    }
}
