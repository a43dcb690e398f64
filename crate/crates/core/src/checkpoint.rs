//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "EERCKPT1"
//! u32     length of the config echo
//! bytes   config echo (flat key = value text)
//! u32     array count
//! per array:
//!   u16     name length, then the name bytes
//!   u32     rows
//!   u32     cols
//!   f64[]   rows * cols values, raw IEEE-754 bits
//! ```
//!
//! Values round-trip bit-exactly because they are stored as raw bits.

use crate::model::{ModelWeights, WEIGHT_NAMES};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"EERCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint is truncated or malformed: {0}")]
    Malformed(String),
    #[error("checkpoint arrays do not form a complete weight set: {0}")]
    IncompleteWeights(String),
}

pub fn save_bytes(weights: &ModelWeights, config_echo: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let echo = config_echo.as_bytes();
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo);
    let arrays = weights.arrays();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, tensor) in arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_bytes(bytes: &[u8]) -> Result<(ModelWeights, String), CheckpointError> {
    let mut cursor = io::Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let echo_len = read_u32(&mut cursor)? as usize;
    let mut echo = vec![0u8; echo_len];
    cursor.read_exact(&mut echo)?;
    let echo = String::from_utf8(echo)
        .map_err(|_| CheckpointError::Malformed("config echo is not UTF-8".into()))?;

    let count = read_u32(&mut cursor)? as usize;
    let mut arrays: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u16(&mut cursor)? as usize;
        let mut name = vec![0u8; name_len];
        cursor.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("array name is not UTF-8".into()))?;
        let rows = read_u32(&mut cursor)? as usize;
        let cols = read_u32(&mut cursor)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            cursor.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor = Tensor::from_vec(rows, cols, data)
            .map_err(|e| CheckpointError::Malformed(format!("array {name}: {e}")))?;
        arrays.insert(name, tensor);
    }

    let mut take = |name: &str| {
        arrays
            .remove(name)
            .ok_or_else(|| CheckpointError::IncompleteWeights(format!("missing array {name}")))
    };
    let weights = ModelWeights {
        embed: take("embed")?,
        w_q: take("w_q")?,
        w_k: take("w_k")?,
        w_v: take("w_v")?,
        mlp_in: take("mlp_in")?,
        mlp_b1: take("mlp_b1")?,
        mlp_out: take("mlp_out")?,
        mlp_b2: take("mlp_b2")?,
        norm_gain: take("norm_gain")?,
        norm_bias: take("norm_bias")?,
        readout: take("readout")?,
    };
    if !arrays.is_empty() {
        let extra: Vec<String> = arrays.keys().cloned().collect();
        return Err(CheckpointError::IncompleteWeights(format!(
            "unexpected arrays: {}",
            extra.join(", ")
        )));
    }
    debug_assert_eq!(WEIGHT_NAMES.len(), 11);
    Ok((weights, echo))
}

pub fn save_file(
    path: &Path,
    weights: &ModelWeights,
    config_echo: &str,
) -> Result<(), CheckpointError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&save_bytes(weights, config_echo))?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<(ModelWeights, String), CheckpointError> {
    let bytes = std::fs::read(path)?;
    load_bytes(&bytes)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read) -> Result<u16, CheckpointError> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}
