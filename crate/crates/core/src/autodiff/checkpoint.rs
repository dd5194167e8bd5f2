//! Parameter checkpoints: a little-endian f64 blob plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "pvgnn-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub params: Vec<ParamEntry>,
    /// Model hyperparameters and anything else needed to rebuild the model.
    pub model: serde_json::Value,
}

pub fn encode(store: &ParamStore) -> (Vec<ParamEntry>, Vec<u8>) {
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let entries = store
        .iter()
        .map(|(_, name, t)| {
            let offset = blob.len();
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            }
        })
        .collect();
    (entries, blob)
}

pub fn decode(entries: &[ParamEntry], blob: &[u8]) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for e in entries {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * 8;
        let bytes = blob.get(e.offset..end).ok_or_else(|| {
            Error::Checkpoint(format!("parameter {} runs past end of blob", e.name))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.add(e.name.clone(), Tensor::new(&e.shape, data)?);
    }
    Ok(store)
}

pub fn save(dir: &Path, store: &ParamStore, model: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (params, blob) = encode(store);
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        params,
        model,
    };
    fs::write(dir.join(BLOB_FILE), blob)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(CheckpointManifest, ParamStore)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?}",
            manifest.format
        )));
    }
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let store = decode(&manifest.params, &blob)?;
    Ok((manifest, store))
}
