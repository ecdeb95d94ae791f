//! Binary model checkpoints.
//!
//! Layout: the magic `DSNC`, a little-endian `u32` version (1), a
//! little-endian `u64` header length, a JSON header, then every tensor as
//! little-endian `f32` values in header order. Tensor offsets count bytes
//! from the start of the blob section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lindeform_core::nets::{Model, ModelConfig, Variant, Widths};

use crate::{read_file, write_atomic, Error, Result};

pub const MAGIC: &[u8; 4] = b"DSNC";
pub const VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub n: usize,
    pub k: usize,
    pub variant: Variant,
    pub widths: Widths,
    pub normalize_rotation: bool,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let cfg = model.config();
    let mut offset = 0u64;
    let mut tensors = Vec::new();
    for (name, shape, data) in model.tensors() {
        tensors.push(TensorEntry { name, shape, offset });
        offset += 4 * data.len() as u64;
    }
    let header = Header {
        n: cfg.n,
        k: cfg.k,
        variant: cfg.variant,
        widths: cfg.widths.clone(),
        normalize_rotation: cfg.normalize_rotation,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in model.tensors() {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(format!("checkpoint: {}", msg.into()))
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 16 {
        return Err(bad("truncated preamble"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if hlen > MAX_HEADER || 16 + hlen > bytes.len() as u64 {
        return Err(bad("truncated header"));
    }
    let hend = 16 + hlen as usize;
    let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(format!("header: {e}")))?;
    let config = ModelConfig {
        n: header.n,
        k: header.k,
        variant: header.variant,
        widths: header.widths.clone(),
        normalize_rotation: header.normalize_rotation,
    };
    let mut model = Model::new(config, 0).map_err(|e| bad(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>, usize)> =
        model.tensors().into_iter().map(|(n, s, d)| (n, s, d.len())).collect();
    if expected.len() != header.tensors.len() {
        return Err(bad(format!("expected {} tensors, found {}", expected.len(), header.tensors.len())));
    }
    let blobs = &bytes[hend..];
    let mut cursor = 0u64;
    for ((name, shape, len), entry) in expected.iter().zip(&header.tensors) {
        if &entry.name != name || &entry.shape != shape {
            return Err(bad(format!("tensor {} {:?} does not match the architecture", entry.name, entry.shape)));
        }
        if entry.offset != cursor {
            return Err(bad(format!("tensor {} has offset {}, expected {cursor}", entry.name, entry.offset)));
        }
        let end = cursor + 4 * *len as u64;
        if end > blobs.len() as u64 {
            return Err(bad("truncated tensor data"));
        }
        let data: Vec<f32> = blobs[cursor as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.set_tensor(name, shape, &data).map_err(|e| bad(e.to_string()))?;
        cursor = end;
    }
    if cursor != blobs.len() as u64 {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(model)
}

/// Writes atomically.
pub fn save(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &encode(model)?)
}

pub fn load(path: &Path) -> Result<Model> {
    decode(&read_file(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
