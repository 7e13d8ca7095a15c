//! Evaluation on the labeled target eval split.
//!
//! A video's prediction is the argmax of its mean logits: over every-other
//! frames for the image model, over chunks for the video model. Ties go to
//! the lowest class index.

use serde::{Deserialize, Serialize};

use crate::encoders::{encoder2d_forward, encoder3d_forward, Encoder2dState, Encoder3dState};
use crate::numerics::tensor::Tensor;
use crate::webdata::{chunk_frame_indices, Dataset, DomainTag, Split};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    FrameModel,
    VideoModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: usize,
    pub name: String,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub accuracy: f64,
    pub n_videos: usize,
    pub per_class: Vec<ClassAccuracy>,
}

impl EvalReport {
    /// Accuracy restricted to a subset of classes.
    pub fn accuracy_on(&self, class_ids: &[usize]) -> f64 {
        let (mut correct, mut total) = (0usize, 0usize);
        for c in &self.per_class {
            if class_ids.contains(&c.class_id) {
                correct += c.correct;
                total += c.total;
            }
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

/// Lowest index wins ties.
pub fn argmax_tie_low(v: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean of logit rows (one per frame or chunk).
pub fn mean_logits(rows: &[Vec<f32>]) -> Vec<f32> {
    assert!(!rows.is_empty());
    let mut out = vec![0.0f32; rows[0].len()];
    for row in rows {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    for o in out.iter_mut() {
        *o /= rows.len() as f32;
    }
    out
}

fn tally(
    dataset: &Dataset,
    predictions: &[(usize, usize)], // (label, predicted)
    mode: EvalMode,
) -> EvalReport {
    let mut per_class: Vec<ClassAccuracy> = dataset
        .manifest
        .classes
        .iter()
        .map(|c| ClassAccuracy {
            class_id: c.id,
            name: c.name.clone(),
            correct: 0,
            total: 0,
        })
        .collect();
    let mut correct = 0usize;
    for &(label, pred) in predictions {
        per_class[label].total += 1;
        if pred == label {
            per_class[label].correct += 1;
            correct += 1;
        }
    }
    EvalReport {
        mode,
        accuracy: correct as f64 / predictions.len() as f64,
        n_videos: predictions.len(),
        per_class,
    }
}

fn eval_indices(dataset: &Dataset) -> Result<Vec<usize>> {
    let idx = dataset.indices(DomainTag::Target, Split::Eval);
    if idx.is_empty() {
        return Err(CoreError::Dataset("eval split is empty".into()));
    }
    Ok(idx)
}

/// Frame-model evaluation: mean logits over a video's every-other frames.
pub fn evaluate_image_state(encoder: &Encoder2dState, dataset: &Dataset) -> Result<EvalReport> {
    let hw = dataset.manifest.config.frame_size;
    let mut predictions = Vec::new();
    for idx in eval_indices(dataset)? {
        let item = &dataset.manifest.items[idx];
        let label = item.label.expect("eval split is labeled");
        let frame_ids: Vec<usize> = (0..item.frames).step_by(2).collect();
        let mut data = Vec::with_capacity(frame_ids.len() * 3 * hw * hw);
        for &fi in &frame_ids {
            dataset.copy_frame(idx, fi, &mut data);
        }
        let batch = Tensor::new(vec![frame_ids.len(), 3, hw, hw], data)?;
        let out = encoder2d_forward(encoder, &batch)?;
        let l = encoder.arch.num_classes;
        let rows: Vec<Vec<f32>> = (0..frame_ids.len())
            .map(|i| out.logits.data()[i * l..(i + 1) * l].to_vec())
            .collect();
        predictions.push((label, argmax_tie_low(&mean_logits(&rows))));
    }
    Ok(tally(dataset, &predictions, EvalMode::FrameModel))
}

/// Video-model evaluation: mean logits over a video's chunks.
pub fn evaluate_video_state(encoder: &Encoder3dState, dataset: &Dataset) -> Result<EvalReport> {
    let hw = dataset.manifest.config.frame_size;
    let f = dataset.manifest.config.frames_per_chunk;
    let mut predictions = Vec::new();
    for idx in eval_indices(dataset)? {
        let item = &dataset.manifest.items[idx];
        let label = item.label.expect("eval split is labeled");
        let n_chunks = chunk_frame_indices(item.frames, f).len();
        if n_chunks == 0 {
            return Err(CoreError::Dataset(format!(
                "eval video {} too short for a chunk",
                item.id
            )));
        }
        let mut data = Vec::with_capacity(n_chunks * 3 * f * hw * hw);
        for c in 0..n_chunks {
            dataset.copy_chunk(idx, c, &mut data);
        }
        let batch = Tensor::new(vec![n_chunks, 3, f, hw, hw], data)?;
        let out = encoder3d_forward(encoder, &batch)?;
        let l = encoder.arch.num_classes;
        let rows: Vec<Vec<f32>> = (0..n_chunks)
            .map(|i| out.logits.data()[i * l..(i + 1) * l].to_vec())
            .collect();
        predictions.push((label, argmax_tie_low(&mean_logits(&rows))));
    }
    Ok(tally(dataset, &predictions, EvalMode::VideoModel))
}

/// Loads a checkpoint and evaluates it in the requested mode.
pub fn evaluate(checkpoint: &std::path::Path, dataset: &Dataset, mode: EvalMode) -> Result<EvalReport> {
    match mode {
        EvalMode::FrameModel => {
            let (state, _) = super::checkpoint::load_image_checkpoint(checkpoint)?;
            evaluate_image_state(&state.encoder, dataset)
        }
        EvalMode::VideoModel => {
            let (state, _) = super::checkpoint::load_video_checkpoint(checkpoint)?;
            evaluate_video_state(&state.encoder, dataset)
        }
    }
}
