//! Dataset file layout:
//!
//! ```text
//! "DORA1"                      5 magic bytes
//! {json header}\n              one line
//! transition block             n × record, little-endian
//! diagnostics block            n × f64 true parameter, little-endian
//! ```
//!
//! A record is `state f32×S | action f32×A | next_state f32×S | reward f32 |
//! done f32 | episode_id u32 | step u32`. Both binary blocks carry a CRC32 in
//! the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ControllerProfile, DatasetError, TaskDataset, Transition};
use crate::dynamics::{DynamicsSpec, EnvId};

pub const MAGIC: &[u8; 5] = b"DORA1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    env_id: EnvId,
    spec: DynamicsSpec,
    profile: ControllerProfile,
    seed: u64,
    task_index: usize,
    n_transitions: usize,
    state_dim: usize,
    action_dim: usize,
    transitions_crc32: u32,
    diagnostics_crc32: u32,
}

fn record_bytes(state_dim: usize, action_dim: usize) -> usize {
    4 * (2 * state_dim + action_dim + 2) + 8
}

pub fn encode_dataset(dataset: &TaskDataset) -> Result<Vec<u8>, DatasetError> {
    if dataset.transitions.is_empty() {
        return Err(DatasetError::Empty);
    }
    let env = dataset.env_id();
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let n = dataset.transitions.len();

    let mut block = Vec::with_capacity(n * record_bytes(sd, ad));
    let mut diag = Vec::with_capacity(n * 8);
    for t in &dataset.transitions {
        assert_eq!(t.state.len(), sd);
        assert_eq!(t.action.len(), ad);
        let floats = t
            .state
            .iter()
            .chain(&t.action)
            .chain(&t.next_state)
            .copied()
            .chain([t.reward, if t.done { 1.0 } else { 0.0 }]);
        for v in floats {
            block.extend_from_slice(&(v as f32).to_le_bytes());
        }
        block.extend_from_slice(&t.episode_id.to_le_bytes());
        block.extend_from_slice(&t.step_in_episode.to_le_bytes());
        diag.extend_from_slice(&t.true_mu.to_le_bytes());
    }

    let header = Header {
        format_version: FORMAT_VERSION,
        env_id: env,
        spec: dataset.spec,
        profile: dataset.profile.clone(),
        seed: dataset.seed,
        task_index: dataset.task_index,
        n_transitions: n,
        state_dim: sd,
        action_dim: ad,
        transitions_crc32: crc32fast::hash(&block),
        diagnostics_crc32: crc32fast::hash(&diag),
    };
    let mut out = Vec::with_capacity(block.len() + diag.len() + 512);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(
        serde_json::to_string(&header)
            .expect("header serializes")
            .as_bytes(),
    );
    out.push(b'\n');
    out.extend_from_slice(&block);
    out.extend_from_slice(&diag);
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], path: &str) -> Result<TaskDataset, DatasetError> {
    let truncated = || DatasetError::Truncated {
        path: path.to_string(),
    };
    if bytes.len() < MAGIC.len() {
        return Err(truncated());
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(DatasetError::BadMagic {
            path: path.to_string(),
        });
    }
    let rest = &bytes[MAGIC.len()..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(truncated)?;
    let header: Header = serde_json::from_slice(&rest[..newline]).map_err(|e| {
        // A version bump may add fields; report the version when it parses that far.
        match serde_json::from_slice::<serde_json::Value>(&rest[..newline]) {
            Ok(v) if v["format_version"].as_u64() != Some(FORMAT_VERSION as u64) => {
                DatasetError::VersionMismatch {
                    path: path.to_string(),
                    found: v["format_version"].as_u64().unwrap_or(0) as u32,
                    expected: FORMAT_VERSION,
                }
            }
            _ => DatasetError::Header {
                path: path.to_string(),
                reason: e.to_string(),
            },
        }
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            path: path.to_string(),
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let (sd, ad, n) = (header.state_dim, header.action_dim, header.n_transitions);
    if sd != header.env_id.state_dim() || ad != header.env_id.action_dim() {
        return Err(DatasetError::Header {
            path: path.to_string(),
            reason: format!("dimensions {sd}/{ad} do not match {}", header.env_id),
        });
    }
    let body = &rest[newline + 1..];
    let block_len = n * record_bytes(sd, ad);
    let diag_len = n * 8;
    if body.len() < block_len + diag_len {
        return Err(truncated());
    }
    let (block, diag) = (&body[..block_len], &body[block_len..block_len + diag_len]);
    if crc32fast::hash(block) != header.transitions_crc32 {
        return Err(DatasetError::Checksum {
            path: path.to_string(),
            section: "transition",
        });
    }
    if crc32fast::hash(diag) != header.diagnostics_crc32 {
        return Err(DatasetError::Checksum {
            path: path.to_string(),
            section: "diagnostics",
        });
    }

    let f32_at = |b: &[u8], off: usize| {
        f32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes")) as f64
    };
    let u32_at =
        |b: &[u8], off: usize| u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"));
    let rb = record_bytes(sd, ad);
    let transitions = (0..n)
        .map(|i| {
            let r = &block[i * rb..(i + 1) * rb];
            let floats: Vec<f64> = (0..2 * sd + ad + 2).map(|k| f32_at(r, 4 * k)).collect();
            let tail = 4 * (2 * sd + ad + 2);
            Transition {
                state: floats[..sd].to_vec(),
                action: floats[sd..sd + ad].to_vec(),
                next_state: floats[sd + ad..2 * sd + ad].to_vec(),
                reward: floats[2 * sd + ad],
                done: floats[2 * sd + ad + 1] != 0.0,
                episode_id: u32_at(r, tail),
                step_in_episode: u32_at(r, tail + 4),
                true_mu: f64::from_le_bytes(diag[i * 8..i * 8 + 8].try_into().expect("8 bytes")),
            }
        })
        .collect();
    Ok(TaskDataset {
        task_index: header.task_index,
        spec: header.spec,
        profile: header.profile,
        seed: header.seed,
        transitions,
    })
}

/// Writes atomically: the bytes go to a sibling temp file that is then renamed.
pub fn write_dataset(path: &Path, dataset: &TaskDataset) -> Result<(), DatasetError> {
    let bytes = encode_dataset(dataset)?;
    atomic_write(path, &bytes).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_dataset(path: &Path) -> Result<TaskDataset, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_dataset(&bytes, &path.display().to_string())
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
