//! Binary grid file format and its JSON class-table sidecar.
//!
//! Layout, little-endian:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `ORDG`                            |
//! | 2     | format version (`u16`, = 1)             |
//! | 1     | label-space tag (0 semantic, 1 cost)    |
//! | 1     | reserved, written as 0                  |
//! | 12    | dims, 3 × `u32`                         |
//! | 4     | voxel size, `f32`                       |
//! | 12    | origin, 3 × `f32`                       |
//! | 1     | class count                             |
//! | n     | one label byte per voxel, x-major order |

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{widen_f32, GridConfig, VoxelGrid};
use crate::labels::LabelSpace;

pub const MAGIC: [u8; 4] = *b"ORDG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 37;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("bad magic {0:?}, expected \"ORDG\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}, expected {VERSION}")]
    UnsupportedVersion(u16),

    #[error("label-space tag {tag} with class count {class_count} is not a known label space")]
    BadLabelSpace { tag: u8, class_count: u8 },

    #[error("truncated stream: need {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("payload length {actual} does not match dims product {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid grid geometry in header: {0}")]
    BadGeometry(String),

    #[error("label id {id} at voxel {offset} is not valid in the {space} space")]
    InvalidLabel {
        offset: usize,
        id: u8,
        space: LabelSpace,
    },

    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Serializes `grid` in the binary grid format.
pub fn write_grid<W: Write>(grid: &VoxelGrid, mut sink: W) -> std::io::Result<()> {
    sink.write_all(&encode_header(grid))?;
    sink.write_all(grid.labels())?;
    sink.flush()
}

fn encode_header(grid: &VoxelGrid) -> Vec<u8> {
    let cfg = grid.config();
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(&MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.push(grid.space().tag());
    h.push(0);
    for d in cfg.dims() {
        h.extend_from_slice(&(d as u32).to_le_bytes());
    }
    h.extend_from_slice(&(cfg.voxel_size() as f32).to_le_bytes());
    for o in cfg.origin() {
        h.extend_from_slice(&(o as f32).to_le_bytes());
    }
    h.push(grid.space().class_count() as u8);
    debug_assert_eq!(h.len(), HEADER_LEN);
    h
}

/// Reads a complete grid stream. Trailing bytes after the payload are an error.
pub fn read_grid<R: Read>(mut source: R) -> Result<VoxelGrid, DecodeError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_grid(&bytes)
}

pub fn decode_grid(bytes: &[u8]) -> Result<VoxelGrid, DecodeError> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(DecodeError::BadMagic(bytes[..4].try_into().unwrap()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());

    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let tag = bytes[6];
    let class_count = bytes[36];
    let space = LabelSpace::from_tag(tag)
        .filter(|s| s.class_count() == class_count as usize)
        .ok_or(DecodeError::BadLabelSpace { tag, class_count })?;

    let dims = [u32_at(8), u32_at(12), u32_at(16)].map(|d| d as usize);
    let voxel_size = f32_at(20);
    let origin = [f32_at(24), f32_at(28), f32_at(32)];
    let config = GridConfig::new(origin.map(widen_f32), dims, widen_f32(voxel_size))
        .map_err(|e| DecodeError::BadGeometry(e.to_string()))?;

    let payload = &bytes[HEADER_LEN..];
    let expected = config.len();
    if payload.len() < expected {
        return Err(DecodeError::Truncated {
            expected: HEADER_LEN + expected,
            actual: bytes.len(),
        });
    }
    if payload.len() != expected {
        return Err(DecodeError::LengthMismatch {
            expected,
            actual: payload.len(),
        });
    }
    if let Some((offset, &id)) = payload.iter().enumerate().find(|(_, &id)| !space.is_valid(id)) {
        return Err(DecodeError::InvalidLabel { offset, id, space });
    }
    Ok(VoxelGrid::from_labels(config, space, payload.to_vec()).expect("validated above"))
}

/// Class table written next to each grid file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub label_space: LabelSpace,
    pub classes: BTreeMap<u8, String>,
}

impl Sidecar {
    pub fn for_space(space: LabelSpace) -> Self {
        Sidecar {
            label_space: space,
            classes: space
                .ids()
                .map(|id| (id, space.name_of(id).unwrap_or("?").to_owned()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }
}
