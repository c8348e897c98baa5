//! `VCK1` checkpoint archive.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "VCK1"
//! 4       4      u32 LE format version (1)
//! 8       8      u64 LE manifest length M
//! 16      M      manifest, canonical JSON (UTF-8)
//! 16+M    ...    payload: concatenated f32 LE tensor blobs
//! ```
//!
//! The manifest holds the full [`TrainConfig`], the training-state scalars
//! (step, optimizer step count, RNG state), the loss history, one entry per
//! tensor (`name`, `shape`, byte `offset`, element `len`) and the SHA-256 of
//! the payload. Tensors are the model parameters (`param/<name>`) followed by
//! the AdamW moments (`adam_m/<name>`, `adam_v/<name>`).

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{StepRecord, TrainConfig, TrainState};
use crate::model::{Encoder, Param, Params};
use crate::optim::AdamW;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VCK1";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a VCK1 checkpoint: bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("corrupted checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint payload checksum mismatch (expected {expected}, found {found})")]
    Checksum { expected: String, found: String },
    #[error("checkpoint tensors do not match the stored config: {0}")]
    Layout(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// u128 as a decimal string (JSON numbers cannot hold it exactly).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        let bad = |m: &str| CheckpointError::Manifest(format!("rng state: {m}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed is not hex"))?
            .try_into()
            .map_err(|_| bad("seed must be 32 bytes"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word_pos"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: TrainConfig,
    pub step: u64,
    pub optimizer_step: u64,
    pub rng: RngState,
    pub history: Vec<StepRecord>,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

fn tagged<'a>(prefix: &'a str, params: &'a Params<f32>) -> impl Iterator<Item = (String, &'a Param<f32>)> {
    params.tensors.iter().map(move |p| (format!("{prefix}/{}", p.name), p))
}

pub fn encode_checkpoint(state: &TrainState, config: &TrainConfig) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let groups = tagged("param", state.encoder.params())
        .chain(tagged("adam_m", &state.optimizer.m))
        .chain(tagged("adam_v", &state.optimizer.v));
    for (name, p) in groups {
        tensors.push(TensorEntry {
            name,
            shape: p.shape.clone(),
            offset: payload.len(),
            len: p.data.len(),
        });
        for x in &p.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: config.clone(),
        step: state.step,
        optimizer_step: state.optimizer.t,
        rng: RngState::capture(&state.rng),
        history: state.history.clone(),
        tensors,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + payload.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Parsed checkpoint: the config it was written with and the restored state.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < PREFIX_LEN {
        return Err(CheckpointError::Truncated(format!(
            "{} bytes, shorter than the {PREFIX_LEN}-byte prefix",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[PREFIX_LEN..];
    if body.len() < mlen {
        return Err(CheckpointError::Truncated(format!(
            "manifest declares {mlen} bytes, {} available",
            body.len()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen])
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let payload = &body[mlen..];
    let found = hex::encode(Sha256::digest(payload));
    let needed = manifest
        .tensors
        .iter()
        .map(|t| t.offset + 4 * t.len)
        .max()
        .unwrap_or(0);
    if payload.len() < needed {
        return Err(CheckpointError::Truncated(format!(
            "payload has {} bytes, tensors need {needed}",
            payload.len()
        )));
    }
    if found != manifest.payload_sha256 {
        return Err(CheckpointError::Checksum {
            expected: manifest.payload_sha256,
            found,
        });
    }
    manifest
        .config
        .validate()
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    let read = |entry: &TensorEntry| -> Result<Param<f32>, CheckpointError> {
        if entry.shape.iter().product::<usize>() != entry.len {
            return Err(CheckpointError::Manifest(format!(
                "tensor {} shape {:?} disagrees with len {}",
                entry.name, entry.shape, entry.len
            )));
        }
        let raw = &payload[entry.offset..entry.offset + 4 * entry.len];
        Ok(Param {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
            data: raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    };
    let group = |prefix: &str| -> Result<Params<f32>, CheckpointError> {
        let tag = format!("{prefix}/");
        let tensors = manifest
            .tensors
            .iter()
            .filter(|t| t.name.starts_with(&tag))
            .map(|t| {
                read(t).map(|mut p| {
                    p.name = p.name[tag.len()..].to_string();
                    p
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Params { tensors })
    };

    let config = manifest.config.clone();
    let encoder = Encoder::from_params(config.encoder.clone(), group("param")?)
        .map_err(|e| CheckpointError::Layout(e.to_string()))?;
    let (m, v) = (group("adam_m")?, group("adam_v")?);
    if !encoder.params().same_layout(&m) || !encoder.params().same_layout(&v) {
        return Err(CheckpointError::Layout(
            "optimizer moments do not match parameter layout".into(),
        ));
    }
    let optimizer = AdamW {
        config: config.optimizer(),
        t: manifest.optimizer_step,
        m,
        v,
    };
    Ok(Checkpoint {
        config,
        state: TrainState {
            step: manifest.step,
            encoder,
            optimizer,
            rng: manifest.rng.restore()?,
            history: manifest.history,
        },
    })
}

/// Atomic write: staged to a sibling temp file, then renamed.
pub fn save_checkpoint(
    state: &TrainState,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let tmp = path.with_extension("vck.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_checkpoint(state, config))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}
