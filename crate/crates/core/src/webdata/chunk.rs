//! Chunk extraction: non-overlapping windows of 2F consecutive frames,
//! keeping every other frame, trailing remainder dropped.

use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

/// Start frame of each chunk window for a video of `n_frames`.
pub fn chunk_starts(n_frames: usize, f: usize) -> Vec<usize> {
    if f == 0 || n_frames < 2 * f {
        return Vec::new();
    }
    (0..n_frames / (2 * f)).map(|c| c * 2 * f).collect()
}

/// Frame indices contributing to chunk `c`: start + 2j for j in 0..f.
pub fn chunk_frame_indices(n_frames: usize, f: usize) -> Vec<Vec<usize>> {
    chunk_starts(n_frames, f)
        .into_iter()
        .map(|start| (0..f).map(|j| start + 2 * j).collect())
        .collect()
}

/// Splits a [3, n_frames, h, w] video into [3, f, h, w] chunks. A video
/// shorter than 2f yields an empty list (callers record the count in the
/// manifest rather than treating it as an error).
pub fn chunk_video(video: &Tensor, f: usize) -> Result<Vec<Tensor>> {
    let s = video.shape();
    if s.len() != 4 || s[0] != 3 {
        return Err(CoreError::shape(
            "chunk_video",
            "[3, n_frames, h, w]",
            format!("{s:?}"),
        ));
    }
    if f == 0 {
        return Err(CoreError::InvalidArgument("frames per chunk must be positive".into()));
    }
    let (n, h, w) = (s[1], s[2], s[3]);
    let hw = h * w;
    let src = video.data();
    let mut out = Vec::new();
    for indices in chunk_frame_indices(n, f) {
        let mut data = Vec::with_capacity(3 * f * hw);
        for c in 0..3 {
            for &fi in &indices {
                let base = (c * n + fi) * hw;
                data.extend_from_slice(&src[base..base + hw]);
            }
        }
        out.push(Tensor::new(vec![3, f, h, w], data)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(n_frames: usize) -> Tensor {
        // frame i is filled with the value i so indices are recoverable
        let hw = 4;
        let mut data = Vec::new();
        for _c in 0..3 {
            for i in 0..n_frames {
                data.extend(std::iter::repeat(i as f32).take(hw));
            }
        }
        Tensor::new(vec![3, n_frames, 2, 2], data).unwrap()
    }

    #[test]
    fn thirty_two_frames_give_two_chunks() {
        let chunks = chunk_video(&video(32), 8).unwrap();
        assert_eq!(chunks.len(), 2);
        // chunk 0 holds frames 0, 2, ..., 14
        let first: Vec<f32> = (0..8).map(|j| chunks[0].data()[j * 4]).collect();
        assert_eq!(first, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]);
        // chunk 1 starts at frame 16
        assert_eq!(chunks[1].data()[0], 16.0);
    }

    #[test]
    fn sixteen_frames_give_one_chunk() {
        assert_eq!(chunk_video(&video(16), 8).unwrap().len(), 1);
    }

    #[test]
    fn fifteen_frames_give_no_chunks() {
        assert_eq!(chunk_video(&video(15), 8).unwrap().len(), 0);
    }

    #[test]
    fn index_rule_holds_for_every_chunk() {
        for n in [16usize, 17, 31, 32, 48, 100] {
            for (c, idx) in chunk_frame_indices(n, 8).iter().enumerate() {
                assert_eq!(idx.len(), 8);
                for (j, &fi) in idx.iter().enumerate() {
                    assert_eq!(fi, c * 16 + 2 * j);
                    assert!(fi < n);
                }
            }
        }
    }
}
