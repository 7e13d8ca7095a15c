//! Overlap removal between web items and target keyframes.
//!
//! A web image is removed when its embedding's cosine similarity to any
//! target keyframe embedding exceeds the threshold; a web video is removed
//! when any of its keyframe embeddings does. Zero-norm embeddings cannot be
//! compared, so those items are flagged and kept.

use crate::numerics::similarity::cosine_similarity_slices;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Default)]
pub struct DedupReport {
    /// Unique item ids kept, in first-appearance order.
    pub kept: Vec<String>,
    /// Unique item ids removed, in first-appearance order.
    pub removed: Vec<String>,
    /// Items with at least one zero-norm embedding (kept, but reported).
    pub flagged_zero_norm: Vec<String>,
}

/// Compares web embeddings (one or more rows per item id, e.g. one per video
/// keyframe) against target embeddings.
pub fn dedup_overlap(
    web_ids: &[String],
    web_embeddings: &Tensor,
    target_embeddings: &Tensor,
    threshold: f64,
) -> Result<DedupReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CoreError::InvalidArgument(format!(
            "dedup threshold must be in (0, 1], got {threshold}"
        )));
    }
    let (ws, ts) = (web_embeddings.shape(), target_embeddings.shape());
    if ws.len() != 2 || ts.len() != 2 || ws[1] != ts[1] {
        return Err(CoreError::shape(
            "dedup_overlap",
            "[n, d] web and [m, d] target embeddings",
            format!("{ws:?} vs {ts:?}"),
        ));
    }
    if web_ids.len() != ws[0] {
        return Err(CoreError::InvalidArgument(format!(
            "dedup_overlap: {} ids for {} embedding rows",
            web_ids.len(),
            ws[0]
        )));
    }
    let d = ws[1];
    let wv = web_embeddings.data();
    let tv = target_embeddings.data();

    let mut order: Vec<String> = Vec::new();
    let mut over: std::collections::BTreeMap<String, bool> = std::collections::BTreeMap::new();
    let mut flagged: Vec<String> = Vec::new();

    for (row, id) in web_ids.iter().enumerate() {
        if !over.contains_key(id) {
            order.push(id.clone());
            over.insert(id.clone(), false);
        }
        let wrow = &wv[row * d..(row + 1) * d];
        let mut row_over = false;
        let mut row_zero = false;
        for k in 0..ts[0] {
            let trow = &tv[k * d..(k + 1) * d];
            match cosine_similarity_slices(wrow, trow) {
                Ok(cos) => {
                    if cos > threshold {
                        row_over = true;
                        break;
                    }
                }
                Err(_) => {
                    row_zero = true;
                }
            }
        }
        if row_over {
            *over.get_mut(id).expect("inserted above") = true;
        }
        if row_zero && !flagged.contains(id) {
            flagged.push(id.clone());
        }
    }

    let mut report = DedupReport {
        flagged_zero_norm: flagged,
        ..Default::default()
    };
    for id in order {
        if over[&id] {
            report.removed.push(id);
        } else {
            report.kept.push(id);
        }
    }
    Ok(report)
}
