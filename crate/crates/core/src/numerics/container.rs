//! Binary tensor container.
//!
//! Layout: magic bytes `WDA1`, a little-endian u32 manifest length, a UTF-8
//! JSON manifest mapping name -> `{shape, dtype: "f32", byte_offset}`, then
//! the concatenated little-endian f32 payloads. `byte_offset` is relative to
//! the start of the payload section. Manifest keys are sorted, so two saves
//! of the same tensors produce byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"WDA1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
}

/// Saves named tensors. Names must be unique (guaranteed by the map) and
/// shapes positive (guaranteed by `Tensor`).
pub fn save_tensors(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut manifest = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in tensors {
        manifest.insert(
            name.clone(),
            Entry {
                shape: t.shape().to_vec(),
                dtype: "f32".to_string(),
                byte_offset: offset,
            },
        );
        offset += (t.numel() * 4) as u64;
    }
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for t in tensors.values() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads every tensor from a container file.
pub fn load_tensors(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| CoreError::Container(format!("{}: truncated header: {e}", path.display())))?;
    if &magic != MAGIC {
        return Err(CoreError::Container(format!(
            "{}: bad magic bytes {magic:?}",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|e| CoreError::Container(format!("{}: truncated manifest length: {e}", path.display())))?;
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)
        .map_err(|e| CoreError::Container(format!("{}: truncated manifest: {e}", path.display())))?;
    let manifest: BTreeMap<String, Entry> = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| CoreError::Container(format!("{}: corrupt manifest: {e}", path.display())))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut out = BTreeMap::new();
    for (name, entry) in manifest {
        if entry.dtype != "f32" {
            return Err(CoreError::Container(format!(
                "{name}: unsupported dtype {}",
                entry.dtype
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.byte_offset as usize;
        let end = start + numel * 4;
        if end > payload.len() {
            return Err(CoreError::Container(format!(
                "{name}: payload out of bounds (needs {end} bytes, file has {})",
                payload.len()
            )));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.insert(name, Tensor::new(entry.shape, data)?);
    }
    Ok(out)
}
