//! Flat binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic `b"ADCK"`, `u32` version, `u32` tensor count, then per tensor:
//! `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension,
//! and the raw `f64` payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AdError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ADCK";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes named tensors.
pub fn write_tensors<W: Write>(mut w: W, tensors: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Deserializes named tensors written by [`write_tensors`].
pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AdError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(AdError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| AdError::Format(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(AdError::Format("trailing bytes".into()));
    }
    Ok(out)
}

/// Encodes every parameter of a store.
pub fn store_to_bytes(store: &ParamStore) -> Vec<u8> {
    let named: Vec<(&str, &Tensor)> = store.iter().collect();
    let mut buf = Vec::new();
    write_tensors(&mut buf, &named).expect("writing to a Vec cannot fail");
    buf
}

/// Decodes a checkpoint into a fresh store in file order.
pub fn store_from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, t) in read_tensors(bytes)? {
        store.add(&name, t).map_err(|e| AdError::Format(e.to_string()))?;
    }
    Ok(store)
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    std::fs::write(path, store_to_bytes(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    store_from_bytes(&std::fs::read(path)?)
}
