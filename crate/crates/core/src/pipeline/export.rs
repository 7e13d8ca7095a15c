//! Embedding export for downstream projection/visualization.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{encoder2d_forward, Encoder2dState};
use crate::numerics::container::save_tensors;
use crate::numerics::rng;
use crate::numerics::tensor::Tensor;
use crate::webdata::{Dataset, DomainTag, Split};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportSidecar {
    pub ids: Vec<String>,
    pub domains: Vec<DomainTag>,
    pub labels: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct ExportSummary {
    pub rows: usize,
    pub embedding_dim: usize,
    pub sidecar: ExportSidecar,
}

/// Samples `n` items of a domain (train split) and returns their frame
/// embeddings: images embed directly; videos embed one seeded even frame.
pub fn sample_domain_embeddings(
    encoder: &Encoder2dState,
    dataset: &Dataset,
    domain: DomainTag,
    n: usize,
    seed: u64,
) -> Result<(Tensor, ExportSidecar)> {
    let pool = dataset.indices(domain, Split::Train);
    if pool.is_empty() {
        return Err(CoreError::Dataset(format!("no train items in domain {domain:?}")));
    }
    let tag = format!("export.{domain:?}");
    let mut r = rng::stream(seed, &tag);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut shuffled = pool.clone();
    shuffled.shuffle(&mut r);
    while chosen.len() < n {
        let need = n - chosen.len();
        chosen.extend(shuffled.iter().take(need));
        if chosen.len() < n {
            shuffled.shuffle(&mut r);
        }
    }
    let hw = dataset.manifest.config.frame_size;
    let mut data = Vec::with_capacity(n * 3 * hw * hw);
    let mut sidecar = ExportSidecar {
        ids: Vec::new(),
        domains: Vec::new(),
        labels: Vec::new(),
    };
    for &idx in &chosen {
        let item = &dataset.manifest.items[idx];
        if item.frames == 1 {
            data.extend_from_slice(dataset.pixels(idx).data());
        } else {
            let even: Vec<usize> = (0..item.frames).step_by(2).collect();
            let fi = even[r.gen_range(0..even.len())];
            dataset.copy_frame(idx, fi, &mut data);
        }
        sidecar.ids.push(item.id.clone());
        sidecar.domains.push(item.domain);
        sidecar.labels.push(item.label);
    }
    let batch = Tensor::new(vec![n, 3, hw, hw], data)?;
    let out = encoder2d_forward(encoder, &batch)?;
    Ok((out.embeddings, sidecar))
}

/// Exports `per_domain` embeddings from each of the three domains into a
/// tensor container plus a JSON sidecar with ids, domain tags, and labels.
pub fn export_embeddings(
    encoder: &Encoder2dState,
    dataset: &Dataset,
    per_domain: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<ExportSummary> {
    std::fs::create_dir_all(out_dir)?;
    let d = encoder.arch.embedding_dim();
    let mut rows: Vec<f32> = Vec::with_capacity(3 * per_domain * d);
    let mut sidecar = ExportSidecar {
        ids: Vec::new(),
        domains: Vec::new(),
        labels: Vec::new(),
    };
    for domain in [DomainTag::WebImage, DomainTag::WebVideo, DomainTag::Target] {
        let (emb, side) = sample_domain_embeddings(encoder, dataset, domain, per_domain, seed)?;
        rows.extend_from_slice(emb.data());
        sidecar.ids.extend(side.ids);
        sidecar.domains.extend(side.domains);
        sidecar.labels.extend(side.labels);
    }
    let embeddings = Tensor::new(vec![3 * per_domain, d], rows)?;
    let mut map = BTreeMap::new();
    map.insert("embeddings".to_string(), embeddings);
    save_tensors(&out_dir.join("embeddings.wda"), &map)?;
    std::fs::write(
        out_dir.join("embeddings.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(ExportSummary {
        rows: 3 * per_domain,
        embedding_dim: d,
        sidecar,
    })
}

/// Mean pairwise distance between the per-domain embedding centroids; the
/// before/after comparison of this figure shows whether adaptation pulled
/// the domains together.
pub fn centroid_spread(embeddings: &Tensor, domains: &[DomainTag]) -> f64 {
    let d = embeddings.shape()[1];
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (row, tag) in domains.iter().enumerate() {
        let entry = sums
            .entry(format!("{tag:?}"))
            .or_insert_with(|| (vec![0.0; d], 0));
        for (s, &v) in entry.0.iter_mut().zip(&embeddings.data()[row * d..(row + 1) * d]) {
            *s += v as f64;
        }
        entry.1 += 1;
    }
    let centroids: Vec<Vec<f64>> = sums
        .values()
        .map(|(s, n)| s.iter().map(|v| v / *n as f64).collect())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in (i + 1)..centroids.len() {
            let dist: f64 = centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            total += dist;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
