//! The procedurally generated three-domain benchmark: generation, chunk
//! extraction, overlap dedup, batch assembly, and on-disk dataset access.

pub mod batches;
pub mod chunk;
pub mod dedup;
pub mod generate;
pub mod render;

pub use batches::{BatchSizes, BatchStream, PairBatch, TripletBatch};
pub use chunk::{chunk_frame_indices, chunk_starts, chunk_video};
pub use dedup::{dedup_overlap, DedupReport};
pub use generate::{
    class_table, generate_dataset, ClassSpec, DomainTag, ItemRecord, Manifest, NoiseKind, Split,
    SyntheticDatasetConfig,
};
pub use render::{Motion, Shape, ShiftParams};

use std::path::{Path, PathBuf};

use crate::numerics::container::load_tensors;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

/// A dataset loaded fully into memory (frames are small; the default
/// benchmark is a few hundred MB).
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pixels: Vec<Tensor>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
            CoreError::Dataset(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CoreError::Dataset(format!("corrupt manifest: {e}")))?;
        let mut pixels = Vec::with_capacity(manifest.items.len());
        for item in &manifest.items {
            let tensors = load_tensors(&dir.join(&item.file))?;
            let t = tensors
                .get("pixels")
                .ok_or_else(|| CoreError::Dataset(format!("{}: missing pixels tensor", item.id)))?;
            pixels.push(t.clone());
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            pixels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    /// Pixels of item `idx`: [3, h, w] for images, [3, frames, h, w] for videos.
    pub fn pixels(&self, idx: usize) -> &Tensor {
        &self.pixels[idx]
    }

    /// Appends frame `fi` of video item `idx` as [3, h, w] data.
    pub fn copy_frame(&self, idx: usize, fi: usize, out: &mut Vec<f32>) {
        let t = &self.pixels[idx];
        let s = t.shape();
        debug_assert_eq!(s.len(), 4, "copy_frame expects a video item");
        let (n, hw) = (s[1], s[2] * s[3]);
        for c in 0..3 {
            let base = (c * n + fi) * hw;
            out.extend_from_slice(&t.data()[base..base + hw]);
        }
    }

    /// Appends chunk `c` of video item `idx` as [3, f, h, w] data.
    pub fn copy_chunk(&self, idx: usize, chunk_idx: usize, out: &mut Vec<f32>) {
        let t = &self.pixels[idx];
        let s = t.shape();
        debug_assert_eq!(s.len(), 4, "copy_chunk expects a video item");
        let f = self.manifest.config.frames_per_chunk;
        let (n, hw) = (s[1], s[2] * s[3]);
        let indices = &chunk_frame_indices(n, f)[chunk_idx];
        for c in 0..3 {
            for &fi in indices {
                let base = (c * n + fi) * hw;
                out.extend_from_slice(&t.data()[base..base + hw]);
            }
        }
    }

    /// Item indices for a domain and split.
    pub fn indices(&self, domain: DomainTag, split: Split) -> Vec<usize> {
        self.manifest
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.domain == domain && it.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}
