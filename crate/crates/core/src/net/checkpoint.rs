//! `MFN1` checkpoint format: magic, length-prefixed NetConfig JSON, then
//! every parameter tensor in declaration order as little-endian f64.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{init_params, ModelParams, NetConfig};

const MAGIC: &[u8; 4] = b"MFN1";

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let config_json = serde_json::to_vec(&params.config)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&config_json);
    for tensor in params.tensors() {
        for v in tensor.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "{} is not an MFN1 checkpoint",
            path.display()
        )));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + json_len {
        return Err(Error::BadCheckpoint("truncated config blob".into()));
    }
    let config: NetConfig = serde_json::from_slice(&bytes[8..8 + json_len])?;
    config.validate()?;

    // Build the shape tree, then overwrite every tensor from the payload.
    let mut params = init_params(&config)?;
    let mut offset = 8 + json_len;
    for tensor in params.tensors_mut() {
        let need = tensor.len() * 8;
        if bytes.len() < offset + need {
            return Err(Error::BadCheckpoint("truncated tensor payload".into()));
        }
        for v in tensor.iter_mut() {
            *v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    if offset != bytes.len() {
        return Err(Error::BadCheckpoint(format!(
            "{} trailing bytes after tensors",
            bytes.len() - offset
        )));
    }
    if !params.all_finite() {
        return Err(Error::BadCheckpoint("non-finite parameter".into()));
    }
    Ok(params)
}
