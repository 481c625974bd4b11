//! Self-describing checkpoint container.
//!
//! Layout: 8-byte little-endian header length, a JSON header holding the
//! config and the tensor directory (name + dims in traversal order), then
//! the raw tensor data as little-endian f64. Save/load roundtrips are
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::{ModelConfig, ModelError};

const FORMAT: &str = "unicase-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(), ModelError> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    params.for_each_tensor(&mut |name, dims, data| {
        tensors.push(TensorMeta {
            name: name.to_string(),
            dims: dims.to_vec(),
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        config: config.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig), ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let fail = |msg: String| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg,
    };
    if bytes.len() < 8 {
        return Err(fail("truncated header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 8 + header_len {
        return Err(fail("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| fail(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(fail(format!("unknown format {:?}", header.format)));
    }
    if header.version != VERSION {
        return Err(fail(format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;

    let mut params = ModelParams::init(&header.config, 0);
    let mut offset = 8 + header_len;
    let mut meta_idx = 0usize;
    let mut error: Option<ModelError> = None;
    params.for_each_tensor_mut(&mut |name, dims, data| {
        if error.is_some() {
            return;
        }
        let Some(meta) = header.tensors.get(meta_idx) else {
            error = Some(fail(format!("missing tensor {name}")));
            return;
        };
        meta_idx += 1;
        if meta.name != name || meta.dims != dims {
            error = Some(fail(format!(
                "tensor mismatch: file has {:?} {:?}, model expects {name} {dims:?}",
                meta.name, meta.dims
            )));
            return;
        }
        let need = data.len() * 8;
        if bytes.len() < offset + need {
            error = Some(fail(format!("truncated data for tensor {name}")));
            return;
        }
        for (i, v) in data.iter_mut().enumerate() {
            let at = offset + i * 8;
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        }
        offset += need;
    });
    if let Some(e) = error {
        return Err(e);
    }
    if meta_idx != header.tensors.len() {
        return Err(fail("extra tensors in file".into()));
    }
    if offset != bytes.len() {
        return Err(fail("trailing bytes after tensor data".into()));
    }
    Ok((params, header.config))
}
