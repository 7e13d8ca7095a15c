//! Seeded batch assembly over the three domains.
//!
//! Each pool (web images, web video frames, target frames, web chunks,
//! target chunks) is sampled by an independent cycling sampler: a seeded
//! shuffle is consumed in order and reshuffled on wraparound, so one epoch
//! covers the largest domain completely while smaller domains cycle.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::numerics::rng;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

use super::chunk::chunk_frame_indices;
use super::generate::{DomainTag, Split};
use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSizes {
    pub web_images: usize,
    pub web_frames: usize,
    pub target_frames: usize,
    pub web_chunks: usize,
    pub target_chunks: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        BatchSizes {
            web_images: 32,
            web_frames: 32,
            target_frames: 32,
            web_chunks: 8,
            target_chunks: 8,
        }
    }
}

/// One image-stage step's data.
pub struct TripletBatch {
    pub images: Tensor,
    pub image_labels: Vec<usize>,
    /// Manifest item index per image row.
    pub image_items: Vec<usize>,
    pub frames: Tensor,
    pub frame_labels: Vec<usize>,
    /// Manifest item index per frame row.
    pub frame_items: Vec<usize>,
    pub target_frames: Tensor,
}

/// One video-stage step's data.
pub struct PairBatch {
    pub web_chunks: Tensor,
    pub labels: Vec<usize>,
    /// (manifest item index, chunk index) per chunk row.
    pub chunk_items: Vec<(usize, usize)>,
    pub target_chunks: Tensor,
}

struct CycleSampler {
    ids: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl CycleSampler {
    fn new(n: usize, seed: u64, tag: &str) -> Self {
        let mut rng = rng::stream(seed, tag);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        CycleSampler { ids, pos: 0, rng }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.pos == self.ids.len() {
                self.ids.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.ids[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Deterministic triplet/pair batch source over a loaded dataset.
pub struct BatchStream {
    sizes: BatchSizes,
    image_pool: Vec<usize>,
    web_frame_pool: Vec<(usize, usize)>,
    target_frame_pool: Vec<(usize, usize)>,
    web_chunk_pool: Vec<(usize, usize)>,
    target_chunk_pool: Vec<(usize, usize)>,
    s_images: CycleSampler,
    s_web_frames: CycleSampler,
    s_target_frames: CycleSampler,
    s_web_chunks: CycleSampler,
    s_target_chunks: CycleSampler,
}

impl BatchStream {
    pub fn new(dataset: &Dataset, sizes: BatchSizes, seed: u64) -> Result<Self> {
        if sizes.web_images == 0
            || sizes.web_frames == 0
            || sizes.target_frames == 0
            || sizes.web_chunks == 0
            || sizes.target_chunks == 0
        {
            return Err(CoreError::InvalidArgument("batch sizes must be positive".into()));
        }
        let f = dataset.manifest.config.frames_per_chunk;
        let mut image_pool = Vec::new();
        let mut web_frame_pool = Vec::new();
        let mut target_frame_pool = Vec::new();
        let mut web_chunk_pool = Vec::new();
        let mut target_chunk_pool = Vec::new();
        for (idx, item) in dataset.manifest.items.iter().enumerate() {
            match (item.domain, item.split) {
                (DomainTag::WebImage, Split::Train) => image_pool.push(idx),
                (DomainTag::WebVideo, Split::Train) => {
                    for fi in (0..item.frames).step_by(2) {
                        web_frame_pool.push((idx, fi));
                    }
                    for c in 0..chunk_frame_indices(item.frames, f).len() {
                        web_chunk_pool.push((idx, c));
                    }
                }
                (DomainTag::Target, Split::Train) => {
                    for fi in (0..item.frames).step_by(2) {
                        target_frame_pool.push((idx, fi));
                    }
                    for c in 0..chunk_frame_indices(item.frames, f).len() {
                        target_chunk_pool.push((idx, c));
                    }
                }
                _ => {}
            }
        }
        for (name, len) in [
            ("web images", image_pool.len()),
            ("web video frames", web_frame_pool.len()),
            ("target frames", target_frame_pool.len()),
            ("web video chunks", web_chunk_pool.len()),
            ("target chunks", target_chunk_pool.len()),
        ] {
            if len == 0 {
                return Err(CoreError::Dataset(format!("empty domain pool: {name}")));
            }
        }
        Ok(BatchStream {
            sizes,
            s_images: CycleSampler::new(image_pool.len(), seed, "batches.web_images"),
            s_web_frames: CycleSampler::new(web_frame_pool.len(), seed, "batches.web_frames"),
            s_target_frames: CycleSampler::new(target_frame_pool.len(), seed, "batches.target_frames"),
            s_web_chunks: CycleSampler::new(web_chunk_pool.len(), seed, "batches.web_chunks"),
            s_target_chunks: CycleSampler::new(target_chunk_pool.len(), seed, "batches.target_chunks"),
            image_pool,
            web_frame_pool,
            target_frame_pool,
            web_chunk_pool,
            target_chunk_pool,
        })
    }

    /// Steps needed to cover the largest image-stage pool once.
    pub fn image_epoch_len(&self) -> usize {
        let per = [
            self.image_pool.len().div_ceil(self.sizes.web_images),
            self.web_frame_pool.len().div_ceil(self.sizes.web_frames),
            self.target_frame_pool.len().div_ceil(self.sizes.target_frames),
        ];
        per.into_iter().max().unwrap_or(0)
    }

    /// Steps needed to cover the largest video-stage pool once.
    pub fn video_epoch_len(&self) -> usize {
        let per = [
            self.web_chunk_pool.len().div_ceil(self.sizes.web_chunks),
            self.target_chunk_pool.len().div_ceil(self.sizes.target_chunks),
        ];
        per.into_iter().max().unwrap_or(0)
    }

    pub fn next_triplet(&mut self, dataset: &Dataset) -> Result<TripletBatch> {
        let img_ids = self.s_images.take(self.sizes.web_images);
        let frm_ids = self.s_web_frames.take(self.sizes.web_frames);
        let tgt_ids = self.s_target_frames.take(self.sizes.target_frames);

        let mut image_labels = Vec::new();
        let mut image_items = Vec::new();
        let mut images = Vec::new();
        for &p in &img_ids {
            let idx = self.image_pool[p];
            image_labels.push(dataset.manifest.items[idx].label.expect("web images are labeled"));
            image_items.push(idx);
            images.extend_from_slice(dataset.pixels(idx).data());
        }
        let hw = dataset.manifest.config.frame_size;
        let images = Tensor::new(vec![img_ids.len(), 3, hw, hw], images)?;

        let mut frame_labels = Vec::new();
        let mut frame_items = Vec::new();
        let mut frames = Vec::new();
        for &p in &frm_ids {
            let (idx, fi) = self.web_frame_pool[p];
            frame_labels.push(dataset.manifest.items[idx].label.expect("web videos are labeled"));
            frame_items.push(idx);
            dataset.copy_frame(idx, fi, &mut frames);
        }
        let frames = Tensor::new(vec![frm_ids.len(), 3, hw, hw], frames)?;

        let mut target = Vec::new();
        for &p in &tgt_ids {
            let (idx, fi) = self.target_frame_pool[p];
            dataset.copy_frame(idx, fi, &mut target);
        }
        let target_frames = Tensor::new(vec![tgt_ids.len(), 3, hw, hw], target)?;

        Ok(TripletBatch {
            images,
            image_labels,
            image_items,
            frames,
            frame_labels,
            frame_items,
            target_frames,
        })
    }

    pub fn next_pair(&mut self, dataset: &Dataset) -> Result<PairBatch> {
        let web_ids = self.s_web_chunks.take(self.sizes.web_chunks);
        let tgt_ids = self.s_target_chunks.take(self.sizes.target_chunks);
        let hw = dataset.manifest.config.frame_size;
        let f = dataset.manifest.config.frames_per_chunk;

        let mut labels = Vec::new();
        let mut chunk_items = Vec::new();
        let mut web = Vec::new();
        for &p in &web_ids {
            let (idx, c) = self.web_chunk_pool[p];
            labels.push(dataset.manifest.items[idx].label.expect("web videos are labeled"));
            chunk_items.push((idx, c));
            dataset.copy_chunk(idx, c, &mut web);
        }
        let web_chunks = Tensor::new(vec![web_ids.len(), 3, f, hw, hw], web)?;

        let mut tgt = Vec::new();
        for &p in &tgt_ids {
            let (idx, c) = self.target_chunk_pool[p];
            dataset.copy_chunk(idx, c, &mut tgt);
        }
        let target_chunks = Tensor::new(vec![tgt_ids.len(), 3, f, hw, hw], tgt)?;

        Ok(PairBatch {
            web_chunks,
            labels,
            chunk_items,
            target_chunks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::webdata::generate::{generate_dataset, SyntheticDatasetConfig};

    fn dataset(seed: u64, name: &str) -> Dataset {
        let dir = std::env::temp_dir().join("webadapt-batch-tests").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = SyntheticDatasetConfig {
            num_classes: 4,
            n_web_images: 24,
            n_web_videos: 4,
            n_target_videos: 4,
            n_target_eval_videos: 2,
            frames_per_video: 16,
            frame_size: 16,
            frames_per_chunk: 8,
            seed,
            ..Default::default()
        };
        generate_dataset(&cfg, &dir).unwrap();
        Dataset::load(&dir).unwrap()
    }

    fn sizes(b: usize) -> BatchSizes {
        BatchSizes {
            web_images: b,
            web_frames: b,
            target_frames: b,
            web_chunks: 2,
            target_chunks: 2,
        }
    }

    #[test]
    fn epoch_arithmetic() {
        let ds = dataset(1, "epoch");
        let bs = BatchStream::new(&ds, sizes(8), 0).unwrap();
        // 24 images @ 8 -> 3; 4 videos x 8 even frames = 32 @ 8 -> 4
        assert_eq!(bs.image_epoch_len(), 4);
        // 4 videos x 1 chunk @ 2 -> 2
        assert_eq!(bs.video_epoch_len(), 2);
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = dataset(2, "det");
        let mut a = BatchStream::new(&ds, sizes(8), 5).unwrap();
        let mut b = BatchStream::new(&ds, sizes(8), 5).unwrap();
        for _ in 0..3 {
            let ta = a.next_triplet(&ds).unwrap();
            let tb = b.next_triplet(&ds).unwrap();
            assert_eq!(ta.image_labels, tb.image_labels);
            assert_eq!(ta.images.data(), tb.images.data());
            assert_eq!(ta.target_frames.data(), tb.target_frames.data());
        }
        let pa = a.next_pair(&ds).unwrap();
        let pb = b.next_pair(&ds).unwrap();
        assert_eq!(pa.labels, pb.labels);
        assert_eq!(pa.web_chunks.data(), pb.web_chunks.data());
    }

    #[test]
    fn different_seed_differs() {
        let ds = dataset(3, "seeds");
        let mut a = BatchStream::new(&ds, sizes(8), 5).unwrap();
        let mut b = BatchStream::new(&ds, sizes(8), 6).unwrap();
        let ta = a.next_triplet(&ds).unwrap();
        let tb = b.next_triplet(&ds).unwrap();
        assert_ne!(ta.images.data(), tb.images.data());
    }

    #[test]
    fn cycling_covers_small_pools_with_reshuffles() {
        let ds = dataset(4, "cycle");
        // image pool of 24 under batch 10: 3 batches consume 30 draws; the
        // first 24 draws cover every image exactly once
        let mut s = CycleSampler::new(24, 9, "t.cycle");
        let mut seen = vec![0usize; 24];
        let first: Vec<usize> = s.take(24);
        for &i in &first {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1), "first pass must be a permutation");
        let second: Vec<usize> = s.take(24);
        let mut seen2 = vec![0usize; 24];
        for &i in &second {
            seen2[i] += 1;
        }
        assert!(seen2.iter().all(|&c| c == 1), "second pass must be a permutation too");
        drop(ds);
    }

    #[test]
    fn chunk_batches_have_expected_shape() {
        let ds = dataset(5, "shape");
        let mut s = BatchStream::new(&ds, sizes(4), 1).unwrap();
        let p = s.next_pair(&ds).unwrap();
        assert_eq!(p.web_chunks.shape(), &[2, 3, 8, 16, 16]);
        assert_eq!(p.target_chunks.shape(), &[2, 3, 8, 16, 16]);
        assert_eq!(p.labels.len(), 2);
    }
}
