//! The `LXL1` container shared by model checkpoints and packed datasets.
//!
//! Layout: the magic bytes `LXL1`, a little-endian `u64` header length, the UTF-8 JSON header,
//! then each tensor's `f32` values little-endian, in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LXL1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_container<W: Write>(
    mut w: W,
    kind: &str,
    meta: serde_json::Value,
    tensors: &[(&str, &Tensor<f32>)],
) -> Result<()> {
    let header = ContainerHeader {
        kind: kind.to_string(),
        meta,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in tensors {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(ContainerHeader, Vec<(String, Tensor<f32>)>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| LxlError::Format("truncated container".into()))?;
    if &magic != MAGIC {
        return Err(LxlError::Format(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| LxlError::Format("truncated header length".into()))?;
    let len = u64::from_le_bytes(len);
    if len > (1 << 31) {
        return Err(LxlError::Format(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)
        .map_err(|_| LxlError::Format("truncated header".into()))?;
    let header: ContainerHeader = serde_json::from_slice(&json)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| LxlError::Format(format!("truncated blob for {}", e.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(LxlError::Format("trailing bytes after last blob".into()));
    }
    Ok((header, tensors))
}
