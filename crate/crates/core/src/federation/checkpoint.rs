//! `FDCK` checkpoint files.
//!
//! Layout (little-endian, 32-byte header then `4 * M` bytes of f32 payload):
//!
//! | offset | size | field            |
//! |--------|------|------------------|
//! | 0      | 4    | magic `FDCK`     |
//! | 4      | 2    | version (1)      |
//! | 6      | 2    | grid size S      |
//! | 8      | 2    | boxes per cell B |
//! | 10     | 2    | classes C        |
//! | 12     | 4    | hidden width H   |
//! | 16     | 2    | input height     |
//! | 18     | 2    | input width      |
//! | 20     | 4    | parameter count M|
//! | 24     | 8    | init seed        |

use thiserror::Error;

use crate::model::{ModelConfig, ParamVector};

pub const MAGIC: &[u8; 4] = b"FDCK";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("truncated checkpoint: {actual} bytes, expected {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing bytes after payload: {actual} bytes, expected {expected}")]
    Trailing { expected: usize, actual: usize },
    #[error("header parameter count {header} does not match model shape ({derived})")]
    CountMismatch { header: usize, derived: usize },
    #[error("parameter {0} is not finite in f32")]
    NonFinite(usize),
    #[error("{0} does not fit the header field")]
    FieldOverflow(&'static str),
    #[error("invalid model config in header: {0}")]
    Config(String),
}

/// Size in bytes of a checkpoint holding `param_count` parameters.
pub fn checkpoint_size(param_count: usize) -> usize {
    HEADER_BYTES + 4 * param_count
}

fn u16_field(v: usize, name: &'static str) -> Result<[u8; 2], CheckpointError> {
    u16::try_from(v).map(u16::to_le_bytes).map_err(|_| CheckpointError::FieldOverflow(name))
}

fn u32_field(v: usize, name: &'static str) -> Result<[u8; 4], CheckpointError> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| CheckpointError::FieldOverflow(name))
}

pub fn serialize_checkpoint(params: &ParamVector, cfg: &ModelConfig) -> Result<Vec<u8>, CheckpointError> {
    let derived = cfg.param_count().map_err(|e| CheckpointError::Config(e.to_string()))?;
    if derived != params.len() {
        return Err(CheckpointError::CountMismatch { header: params.len(), derived });
    }
    let mut out = Vec::with_capacity(checkpoint_size(params.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u16_field(cfg.grid_size, "grid_size")?);
    out.extend_from_slice(&u16_field(cfg.boxes_per_cell, "boxes_per_cell")?);
    out.extend_from_slice(&u16_field(cfg.num_classes, "num_classes")?);
    out.extend_from_slice(&u32_field(cfg.hidden_width, "hidden_width")?);
    out.extend_from_slice(&u16_field(cfg.input_height, "input_height")?);
    out.extend_from_slice(&u16_field(cfg.input_width, "input_width")?);
    out.extend_from_slice(&u32_field(params.len(), "param_count")?);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_BYTES);
    for (i, &v) in params.0.iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(CheckpointError::NonFinite(i));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn deserialize_checkpoint(bytes: &[u8]) -> Result<(ParamVector, ModelConfig), CheckpointError> {
    if bytes.len() < HEADER_BYTES {
        return Err(CheckpointError::Truncated { expected: HEADER_BYTES, actual: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let version = u16_at(4) as u16;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let cfg = ModelConfig {
        grid_size: u16_at(6),
        boxes_per_cell: u16_at(8),
        num_classes: u16_at(10),
        hidden_width: u32_at(12),
        input_height: u16_at(16),
        input_width: u16_at(18),
        seed: u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes")),
    };
    let m = u32_at(20);
    cfg.validate().map_err(|e| CheckpointError::Config(e.to_string()))?;
    let derived = cfg.param_count().expect("validated");
    if derived != m {
        return Err(CheckpointError::CountMismatch { header: m, derived });
    }
    let expected = checkpoint_size(m);
    if bytes.len() < expected {
        return Err(CheckpointError::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(CheckpointError::Trailing { expected, actual: bytes.len() });
    }
    let values = ParamVector(
        bytes[HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    );
    if let Some(i) = values.first_non_finite() {
        return Err(CheckpointError::NonFinite(i));
    }
    Ok((values, cfg))
}

/// Round every parameter through f32, as a checkpoint round trip would.
pub fn quantize(params: &ParamVector) -> ParamVector {
    ParamVector(params.0.iter().map(|&v| v as f32 as f64).collect())
}
