//! Bit-exact model serialization.
//!
//! Layout: magic "OGAW", u32 LE format version, u64 LE header length, a JSON
//! header (model config, training config, class names, and the parameter
//! directory), then the raw little-endian payload. Directory entries must be
//! ascending and non-overlapping and cover the payload exactly; loading
//! re-derives and checks all of that before any tensor is built.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::TrainConfig;

pub const MAGIC: [u8; 4] = *b"OGAW";
pub const FORMAT_VERSION: u32 = 1;

/// Element type of a payload entry. f64 is the default; f32 halves the file
/// at the cost of rounding the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarType {
    #[serde(rename = "f64")]
    F64,
    #[serde(rename = "f32")]
    F32,
}

impl ScalarType {
    fn byte_width(self) -> usize {
        match self {
            ScalarType::F64 => 8,
            ScalarType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DirEntry {
    name: String,
    dtype: ScalarType,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    class_names: Vec<String>,
    directory: Vec<DirEntry>,
}

/// Everything stored alongside the parameters.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub class_names: Vec<String>,
}

fn encode_scalars(values: &[f64], dtype: ScalarType, out: &mut Vec<u8>) {
    match dtype {
        ScalarType::F64 => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        ScalarType::F32 => {
            for v in values {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
}

fn decode_scalars(bytes: &[u8], dtype: ScalarType) -> Vec<f64> {
    match dtype {
        ScalarType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        ScalarType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    }
}

/// Serializes the model (parameters plus batchnorm running statistics).
pub fn save_checkpoint(
    model: &Model,
    train_config: &TrainConfig,
    class_names: &[String],
    dtype: ScalarType,
    path: &Path,
) -> Result<()> {
    let mut directory = Vec::new();
    let mut payload = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, values: &[f64]| {
        let offset = payload.len() as u64;
        encode_scalars(values, dtype, &mut payload);
        directory.push(DirEntry {
            name: name.to_string(),
            dtype,
            shape,
            offset,
            byte_len: payload.len() as u64 - offset,
        });
    };
    model.visit_params(&mut |p| {
        push(p.name(), p.tensor.shape().to_vec(), p.tensor.data());
    });
    model.visit_buffers(&mut |name, data| {
        push(name, vec![data.len()], data);
    });

    let header = Header {
        model_config: model.config.clone(),
        train_config: train_config.clone(),
        class_names: class_names.to_vec(),
        directory,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::invalid(format!("checkpoint header serialization: {e}")))?;

    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len());
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Loads a checkpoint, rebuilding the model from its stored config and
/// filling every parameter and buffer bit-exactly (for f64 payloads).
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || bytes[0..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(CheckpointError::BadMagic { found }.into());
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::TruncatedHeader { needed: 16, available: bytes.len() }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, supported: FORMAT_VERSION }
            .into());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(CheckpointError::TruncatedHeader {
            needed: 16 + header_len,
            available: bytes.len(),
        }
        .into());
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    let payload = &bytes[16 + header_len..];

    // directory sanity: ascending, non-overlapping, sizes match shapes,
    // total equals payload length
    let mut expected_offset = 0u64;
    for (i, entry) in header.directory.iter().enumerate() {
        if entry.offset != expected_offset {
            let prev = if i == 0 { "<start>" } else { &header.directory[i - 1].name };
            return Err(CheckpointError::OverlappingEntries {
                first: prev.to_string(),
                second: entry.name.clone(),
            }
            .into());
        }
        let numel: usize = entry.shape.iter().product();
        if numel * entry.dtype.byte_width() != entry.byte_len as usize {
            return Err(CheckpointError::EntrySizeMismatch {
                name: entry.name.clone(),
                bytes: entry.byte_len as usize,
                shape: entry.shape.clone(),
                dtype: format!("{:?}", entry.dtype),
            }
            .into());
        }
        expected_offset += entry.byte_len;
    }
    if expected_offset as usize != payload.len() {
        return Err(CheckpointError::TruncatedPayload {
            needed: expected_offset as usize,
            available: payload.len(),
        }
        .into());
    }

    let mut model = Model::new(header.model_config.clone(), 0)?;
    let mut by_name: std::collections::HashMap<&str, &DirEntry> =
        header.directory.iter().map(|e| (e.name.as_str(), e)).collect();

    let mut fill_err: Option<Error> = None;
    model.visit_params_mut(&mut |p| {
        if fill_err.is_some() {
            return;
        }
        match by_name.remove(p.name()) {
            None => fill_err = Some(CheckpointError::MissingParameter(p.name().to_string()).into()),
            Some(entry) => {
                if entry.shape != p.tensor.shape() {
                    fill_err = Some(
                        CheckpointError::EntrySizeMismatch {
                            name: entry.name.clone(),
                            bytes: entry.byte_len as usize,
                            shape: entry.shape.clone(),
                            dtype: format!("{:?}", entry.dtype),
                        }
                        .into(),
                    );
                    return;
                }
                let start = entry.offset as usize;
                let data = decode_scalars(&payload[start..start + entry.byte_len as usize], entry.dtype);
                p.set_value(data);
            }
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    model.visit_buffers_mut(&mut |name, buf| {
        if fill_err.is_some() {
            return;
        }
        match by_name.remove(name) {
            None => fill_err = Some(CheckpointError::MissingParameter(name.to_string()).into()),
            Some(entry) => {
                let start = entry.offset as usize;
                let data = decode_scalars(&payload[start..start + entry.byte_len as usize], entry.dtype);
                if data.len() != buf.len() {
                    fill_err = Some(
                        CheckpointError::EntrySizeMismatch {
                            name: entry.name.clone(),
                            bytes: entry.byte_len as usize,
                            shape: entry.shape.clone(),
                            dtype: format!("{:?}", entry.dtype),
                        }
                        .into(),
                    );
                    return;
                }
                *buf = data;
            }
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    if let Some(stray) = by_name.keys().next() {
        return Err(CheckpointError::UnknownParameter(stray.to_string()).into());
    }

    let meta = CheckpointMeta {
        model_config: header.model_config,
        train_config: header.train_config,
        class_names: header.class_names,
    };
    Ok((model, meta))
}
