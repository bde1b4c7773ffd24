//! Parameter checkpoints: `"DORACK1"`, a JSON header line, then every tensor
//! as little-endian `f32` in header order. The header carries a CRC32 of the
//! tensor block.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::io::atomic_write;
use crate::nn::ParamSet;

pub const MAGIC: &[u8; 7] = b"DORACK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file")]
    BadMagic { path: String },
    #[error("{path}: checkpoint format version {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: expected a `{expected}` checkpoint, found `{found}`")]
    WrongKind {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: malformed header: {reason}")]
    Header { path: String, reason: String },
    #[error("{path}: file is truncated")]
    Truncated { path: String },
    #[error("{path}: checksum mismatch in parameter block")]
    Checksum { path: String },
    #[error("checkpoint layout does not match the configured network: {0}")]
    Layout(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: (usize, usize),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: String,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
    crc32: u32,
}

/// A decoded checkpoint: metadata plus named parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub groups: Vec<(String, ParamSet)>,
}

impl Checkpoint {
    pub fn group(&self, name: &str) -> Result<&ParamSet, CheckpointError> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| CheckpointError::Layout(format!("missing parameter group `{name}`")))
    }
}

pub fn encode(kind: &str, metadata: serde_json::Value, groups: &[(&str, &ParamSet)]) -> Vec<u8> {
    let mut block = Vec::new();
    let mut tensors = Vec::new();
    for (group, params) in groups {
        for (name, t) in params.names().iter().zip(params.tensors()) {
            tensors.push(TensorEntry {
                group: group.to_string(),
                name: name.clone(),
                shape: t.dim(),
            });
            for v in t.iter() {
                block.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        metadata,
        tensors,
        crc32: crc32fast::hash(&block),
    };
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(
        serde_json::to_string(&header)
            .expect("header serializes")
            .as_bytes(),
    );
    out.push(b'\n');
    out.extend_from_slice(&block);
    out
}

pub fn decode(
    bytes: &[u8],
    expected_kind: &str,
    path: &str,
) -> Result<Checkpoint, CheckpointError> {
    let p = || path.to_string();
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated { path: p() });
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic { path: p() });
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(CheckpointError::Truncated { path: p() })?;
    let header: Header =
        serde_json::from_slice(&rest[..nl]).map_err(|e| CheckpointError::Header {
            path: p(),
            reason: e.to_string(),
        })?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            path: p(),
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.kind != expected_kind {
        return Err(CheckpointError::WrongKind {
            path: p(),
            expected: expected_kind.to_string(),
            found: header.kind,
        });
    }
    let total: usize = header.tensors.iter().map(|t| t.shape.0 * t.shape.1).sum();
    let block = &rest[nl + 1..];
    if block.len() < 4 * total {
        return Err(CheckpointError::Truncated { path: p() });
    }
    let block = &block[..4 * total];
    if crc32fast::hash(block) != header.crc32 {
        return Err(CheckpointError::Checksum { path: p() });
    }
    let mut groups: Vec<(String, ParamSet)> = Vec::new();
    let mut offset = 0;
    for entry in header.tensors {
        let n = entry.shape.0 * entry.shape.1;
        let values: Vec<f64> = block[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        offset += 4 * n;
        let tensor = Array2::from_shape_vec(entry.shape, values).expect("shape matches length");
        match groups.iter_mut().find(|(g, _)| *g == entry.group) {
            Some((_, ps)) => {
                ps.push(entry.name, tensor);
            }
            None => {
                let mut ps = ParamSet::new();
                ps.push(entry.name, tensor);
                groups.push((entry.group, ps));
            }
        }
    }
    Ok(Checkpoint {
        kind: header.kind,
        metadata: header.metadata,
        groups,
    })
}

pub fn save(
    path: &Path,
    kind: &str,
    metadata: serde_json::Value,
    groups: &[(&str, &ParamSet)],
) -> Result<(), CheckpointError> {
    atomic_write(path, &encode(kind, metadata, groups)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path, expected_kind: &str) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes, expected_kind, &path.display().to_string())
}

/// Copies `loaded` into `target` after checking names and shapes agree.
pub fn restore_into(target: &mut ParamSet, loaded: &ParamSet) -> Result<(), CheckpointError> {
    if target.names() != loaded.names() {
        return Err(CheckpointError::Layout(format!(
            "expected tensors {:?}, found {:?}",
            target.names(),
            loaded.names()
        )));
    }
    for id in 0..target.len() {
        if target.tensor(id).dim() != loaded.tensor(id).dim() {
            return Err(CheckpointError::Layout(format!(
                "tensor `{}` has shape {:?}, checkpoint has {:?}",
                target.names()[id],
                target.tensor(id).dim(),
                loaded.tensor(id).dim()
            )));
        }
        target.tensor_mut(id).assign(loaded.tensor(id));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", array![[0.5, -1.25], [3.0, 0.125]]);
        p.push("b", array![[0.1, 0.2]]);
        p
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let p = params();
        let bytes = encode("test", serde_json::json!({"step": 3}), &[("net", &p)]);
        let ck = decode(&bytes, "test", "x").unwrap();
        assert_eq!(ck.metadata["step"], 3);
        let loaded = ck.group("net").unwrap();
        let mut rounded = p.clone();
        rounded.round_to_f32();
        assert_eq!(loaded, &rounded);
    }

    #[test]
    fn errors() {
        let p = params();
        let mut bytes = encode("test", serde_json::Value::Null, &[("net", &p)]);
        assert!(matches!(
            decode(&bytes, "other", "x"),
            Err(CheckpointError::WrongKind { .. })
        ));
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(matches!(
            decode(&bytes, "test", "x"),
            Err(CheckpointError::Checksum { .. })
        ));
        assert!(matches!(
            decode(&bytes[..n - 4], "test", "x"),
            Err(CheckpointError::Truncated { .. })
        ));
    }

    #[test]
    fn restore_checks_layout() {
        let mut target = params();
        let mut other = ParamSet::new();
        other.push("w", Array2::zeros((3, 2)));
        other.push("b", Array2::zeros((1, 2)));
        assert!(restore_into(&mut target, &other).is_err());
        let mut zeros = params();
        zeros.assign_flat(&vec![0.0; zeros.count()]);
        restore_into(&mut target, &zeros).unwrap();
        assert_eq!(target.flatten(), vec![0.0; 6]);
    }
}
