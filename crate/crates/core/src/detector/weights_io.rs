//! Versioned binary weights file.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "RDW1"  fingerprint:u64  epoch:u32  tensor_count:u32
//! per tensor: name_len:u16 name:utf8 ndim:u8 dims:u32*ndim offset:u64
//! payload: f32 values, tensor offsets are byte offsets from the payload start
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::network::{ModelWeights, Tensor};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RDW1";

pub fn encode_weights(weights: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.write_u64::<LittleEndian>(weights.fingerprint).expect("vec write");
    out.write_u32::<LittleEndian>(weights.epoch).expect("vec write");
    out.write_u32::<LittleEndian>(weights.tensors.len() as u32).expect("vec write");
    let mut offset = 0u64;
    for t in &weights.tensors {
        out.write_u16::<LittleEndian>(t.name.len() as u16).expect("vec write");
        out.extend_from_slice(t.name.as_bytes());
        out.write_u8(t.shape.len() as u8).expect("vec write");
        for &d in &t.shape {
            out.write_u32::<LittleEndian>(d as u32).expect("vec write");
        }
        out.write_u64::<LittleEndian>(offset).expect("vec write");
        offset += 4 * t.data.len() as u64;
    }
    for t in &weights.tensors {
        for &v in &t.data {
            out.write_f32::<LittleEndian>(v as f32).expect("vec write");
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadWeightsFile(msg.into())
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| bad("file shorter than the magic"))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(bad(format!("magic {:?}, expected \"RDW1\"", String::from_utf8_lossy(&magic))));
    }
    let truncated = |_| bad("truncated header");
    let fingerprint = cur.read_u64::<LittleEndian>().map_err(truncated)?;
    let epoch = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    let count = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut directory = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        cur.read_exact(&mut name).map_err(|_| bad("truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = cur.read_u8().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        let offset = cur.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        directory.push((name, shape, offset));
    }
    let payload = &bytes[cur.position() as usize..];
    let mut tensors = Vec::with_capacity(directory.len());
    for (name, shape, offset) in directory {
        let n: usize = shape.iter().product();
        let end = offset
            .checked_add(4 * n)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| bad(format!("tensor {name} runs past the payload")))?;
        let data: Vec<f64> = payload[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("tensor {name} holds non-finite values")));
        }
        tensors.push(Tensor { name, shape, data });
    }
    Ok(ModelWeights {
        tensors,
        fingerprint,
        epoch,
    })
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_weights(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// Rounds every parameter to the nearest f32, the precision the file stores.
pub fn quantize(weights: &ModelWeights) -> ModelWeights {
    let mut q = weights.clone();
    for t in &mut q.tensors {
        for v in &mut t.data {
            *v = *v as f32 as f64;
        }
    }
    q
}
