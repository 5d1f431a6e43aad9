//! Weight file: `BENW`, u32 version, u64 header length, JSON header, raw
//! little-endian f32 blobs in header order, then a CRC32 of header and blobs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

const MAGIC: &[u8; 4] = b"BENW";
const VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    /// CRC32 of this tensor's blob, so corruption can be pinned to a name.
    crc32: u32,
}

fn blob<T: Float>(t: &Tensor<T>) -> Vec<u8> {
    t.data().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect()
}

/// Serialises every named tensor (trainable and running statistics).
pub fn encode<T: Float>(model: &Model<T>) -> Result<Vec<u8>> {
    let blobs: Vec<Vec<u8>> = model.params.iter().map(|(_, e)| blob(&e.tensor)).collect();
    let header = Header {
        model: model.kind.name().to_string(),
        tensors: model
            .params
            .iter()
            .zip(&blobs)
            .map(|((name, e), b)| TensorEntry {
                name: name.to_string(),
                dtype: "f32".into(),
                shape: e.tensor.shape().to_vec(),
                crc32: crc32fast::hash(b),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Contract(format!("weight header: {e}")))?;
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + blobs.iter().map(Vec::len).sum::<usize>() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    blobs.iter().for_each(|b| out.extend_from_slice(b));
    let crc = crc32fast::hash(&out[PREAMBLE..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Replaces the model's tensors with the contents of `bytes`. Nothing is
/// modified unless the whole file validates.
pub fn decode<T: Float>(model: &mut Model<T>, bytes: &[u8], path: &Path) -> Result<()> {
    let fail = |msg: String| Error::Weights { path: path.to_path_buf(), msg };
    if bytes.len() < PREAMBLE + 4 {
        return Err(fail(format!("truncated: {} bytes is shorter than the fixed preamble", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("bad magic, not a weight file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fail(format!("unknown version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(PREAMBLE))
        .filter(|&end| end <= bytes.len() - 4)
        .ok_or_else(|| fail(format!("truncated: header length {header_len} runs past end of file")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| fail(format!("unreadable header: {e}")))?;
    if header.tensors.len() != model.params.len() {
        return Err(fail(format!(
            "file holds {} tensors, model expects {}",
            header.tensors.len(),
            model.params.len()
        )));
    }
    let mut offset = header_end;
    let mut decoded = Vec::with_capacity(header.tensors.len());
    for (entry, (name, e)) in header.tensors.iter().zip(model.params.iter()) {
        if entry.name != name {
            return Err(fail(format!("tensor `{}` found where `{name}` was expected", entry.name)));
        }
        if entry.dtype != "f32" {
            return Err(fail(format!("tensor `{name}` has unsupported dtype {}", entry.dtype)));
        }
        if entry.shape != e.tensor.shape() {
            return Err(fail(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                entry.shape,
                e.tensor.shape()
            )));
        }
        let len = e.tensor.numel() * 4;
        let end = offset + len;
        if end > bytes.len() - 4 {
            return Err(fail(format!("truncated inside tensor `{name}`")));
        }
        let raw = &bytes[offset..end];
        if crc32fast::hash(raw) != entry.crc32 {
            return Err(fail(format!("checksum mismatch in tensor `{name}`")));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        decoded.push(Tensor::new(entry.shape.clone(), data)?);
        offset = end;
    }
    if offset + 4 != bytes.len() {
        return Err(fail(format!("{} unexpected trailing bytes", bytes.len() - offset - 4)));
    }
    let stored = u32::from_le_bytes(bytes[offset..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[PREAMBLE..offset]) != stored {
        return Err(fail("file checksum mismatch (header or trailer corrupted)".into()));
    }
    for (idx, t) in decoded.into_iter().enumerate() {
        model.params.assign(idx, t)?;
    }
    Ok(())
}

pub fn save_weights<T: Float>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Float>(model: &mut Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(model, &bytes, path)
}
