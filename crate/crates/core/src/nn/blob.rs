//! Checkpoint tensor blobs: little-endian `f32` arrays plus a JSON manifest
//! mapping each tensor name to its shape and byte offset.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io::atomic_write;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the `.bin` file.
    pub offset: usize,
}

pub type BlobManifest = BTreeMap<String, BlobEntry>;

pub fn encode(store: &ParamStore<f32>) -> (Vec<u8>, BlobManifest) {
    let mut bytes = Vec::with_capacity(store.num_scalars() * 4);
    let mut manifest = BlobManifest::new();
    for (_, p) in store.iter() {
        manifest.insert(
            p.name.clone(),
            BlobEntry {
                shape: p.value.shape().to_vec(),
                offset: bytes.len(),
            },
        );
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (bytes, manifest)
}

/// Rebuilds a store; tensors are ordered by offset, which is write order.
pub fn decode(bytes: &[u8], manifest: &BlobManifest) -> Result<ParamStore<f32>> {
    let mut entries: Vec<_> = manifest.iter().collect();
    entries.sort_by_key(|(_, e)| e.offset);
    let mut store = ParamStore::new();
    for (name, entry) in entries {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        if end > bytes.len() {
            return Err(Error::Data(format!("tensor {name} runs past the end of the blob")));
        }
        let data = bytes[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok(store)
}

/// Writes `<stem>.bin` and `<stem>.json` under `dir`.
pub fn save(dir: &Path, stem: &str, store: &ParamStore<f32>) -> Result<()> {
    let (bytes, manifest) = encode(store);
    atomic_write(&dir.join(format!("{stem}.bin")), &bytes)?;
    atomic_write(
        &dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )
}

pub fn load(dir: &Path, stem: &str) -> Result<ParamStore<f32>> {
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: BlobManifest = serde_json::from_str(&text)?;
    decode(&bytes, &manifest)
}
