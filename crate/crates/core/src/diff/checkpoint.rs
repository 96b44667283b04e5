//! `XCKP` parameter files.
//!
//! Little-endian: magic `XCKP`, u32 version (1), u32 block count, then per
//! block a u16 name length, the UTF-8 name, u8 rank, rank × u32 dims and
//! the f32 payload. A JSON manifest next to the file mirrors the block
//! names and shapes and carries the model configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io::{self, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub sha256: String,
    pub trainable_parameters: usize,
    pub blocks: Vec<BlockInfo>,
    pub config: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_store(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * store.total_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for b in store.blocks() {
        out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.push(b.tensor.shape().len() as u8);
        for &d in b.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in b.tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes blocks; every block comes back marked trainable.
pub fn decode_store(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader::new(bytes, "XCKP checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported XCKP version {version}")));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("checkpoint block name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = io::checked_volume(&shape, "checkpoint block")?;
        let data = r.f32_vec(n)?.into_iter().map(f64::from).collect();
        let t =
            Tensor::new(&shape, data).map_err(|e| Error::Format(format!("block `{name}`: {e}")))?;
        store
            .add(name, t, true)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    r.finish()?;
    Ok(store)
}

/// Writes the checkpoint and its manifest; returns the payload hash.
pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    kind: &str,
    config: serde_json::Value,
) -> Result<String> {
    let bytes = encode_store(store);
    let sha = io::sha256_hex(&bytes);
    let manifest = CheckpointManifest {
        format: "XCKP".into(),
        version: CHECKPOINT_VERSION,
        kind: kind.into(),
        sha256: sha.clone(),
        trainable_parameters: store.trainable_count(),
        blocks: store
            .blocks()
            .iter()
            .map(|b| BlockInfo {
                name: b.name.clone(),
                shape: b.tensor.shape().to_vec(),
                trainable: b.trainable,
            })
            .collect(),
        config,
    };
    io::write_atomic(path, &bytes)?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write_atomic(&manifest_path(path), text.as_bytes())?;
    Ok(sha)
}

pub fn load_manifest(path: &Path) -> Result<CheckpointManifest> {
    let mpath = manifest_path(path);
    let text = io::read_file(&mpath)?;
    serde_json::from_slice(&text).map_err(|e| Error::Parse {
        what: mpath.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads the parameter blocks and the manifest, checking the payload hash.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, CheckpointManifest)> {
    let bytes = io::read_file(path)?;
    let store =
        decode_store(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let manifest = load_manifest(path)?;
    if manifest.sha256 != io::sha256_hex(&bytes) {
        return Err(Error::Format(format!(
            "{}: payload hash does not match its manifest",
            path.display()
        )));
    }
    Ok((store, manifest))
}
