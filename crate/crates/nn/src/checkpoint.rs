//! Binary parameter snapshots and weight checksums.
//!
//! Layout (little endian): magic `PBTW`, u32 version, u64 tensor count, then
//! per tensor: u32 name length, name bytes, u32 rank, u64 dims, f64 values.
//! Normalisation running statistics are not part of the format.

use crate::{Layer, NnError, Param, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PBTW";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(model: &dyn Layer, mut w: W) -> Result<()> {
    let mut count = 0u64;
    let mut body = Vec::new();
    let mut status: std::io::Result<()> = Ok(());
    model.visit_params_ref(&mut |p: &Param| {
        if status.is_ok() {
            count += 1;
            status = encode_param(&mut body, p);
        }
    });
    status?;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(count)?;
    w.write_all(&body)?;
    Ok(())
}

fn encode_param(w: &mut Vec<u8>, p: &Param) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(p.name.len() as u32)?;
    w.write_all(p.name.as_bytes())?;
    w.write_u32::<LittleEndian>(p.value.ndim() as u32)?;
    for &d in p.value.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in p.value.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Loads values into an already-constructed model; names and shapes must match
/// in visit order.
pub fn read_params<R: Read>(model: &mut dyn Layer, mut r: R) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let dims = (0..rank).map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        tensors.push((String::from_utf8_lossy(&name).into_owned(), dims, data));
    }
    let mut idx = 0;
    let mut err = None;
    model.visit_params(&mut |p| {
        if err.is_some() {
            return;
        }
        match tensors.get(idx) {
            Some((name, dims, data)) if name == &p.name && dims.as_slice() == p.value.shape() => {
                p.value.iter_mut().zip(data).for_each(|(v, d)| *v = *d);
            }
            Some((name, dims, _)) => {
                err = Some(NnError::Checkpoint(format!(
                    "tensor {idx}: file has `{name}` {dims:?}, model expects `{}` {:?}",
                    p.name,
                    p.value.shape()
                )))
            }
            None => err = Some(NnError::Checkpoint(format!("file has {count} tensors, model needs more"))),
        }
        idx += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if idx != count {
        return Err(NnError::Checkpoint(format!("file has {count} tensors, model has {idx}")));
    }
    Ok(())
}

pub fn save(model: &dyn Layer, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(model, f)
}

pub fn load(model: &mut dyn Layer, path: &Path) -> Result<()> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(model, f)
}

/// SHA-256 over parameter names and values, hex encoded.
pub fn checksum(model: &dyn Layer) -> String {
    let mut h = Sha256::new();
    model.visit_params_ref(&mut |p| {
        h.update(p.name.as_bytes());
        for v in p.value.iter() {
            h.update(v.to_le_bytes());
        }
    });
    hex::encode(h.finalize())
}
