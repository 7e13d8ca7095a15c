//! Video-stage training: web video chunks against unlabeled target chunks
//! through the (2+1)D encoder with frozen spatial filters, optimizing the
//! attention-weighted chunk cross-entropy plus beta times the single
//! webvideo-target domain loss.

use std::collections::BTreeMap;
use std::path::Path;

use crate::adversarial::{DomainPair, MultiLayerDiscriminatorState};
use crate::attention::{video_stage_loss, AttentionParams, StageLossOptions, VideoBatch, VideoModels};
use crate::encoders::{transfer_spatial_weights, Encoder3dState};
use crate::numerics::rng;
use crate::webdata::{BatchStream, Dataset};
use crate::{CoreError, Result};

use super::checkpoint::{load_image_checkpoint, save_video_checkpoint, VideoTrainState};
use super::config::{DiscInit, RunConfig, SpatialInit};
use super::eval::evaluate_video_state;
use super::metrics::{MetricsRecord, MetricsWriter, Stage};
use super::optimizer::SgdMomentum;
use super::train_image::StageArtifacts;

/// Builds the initial video-stage state: either transferred from a trained
/// image checkpoint (spatial filters copied and frozen, classifier and
/// attention carried over) or from frozen generic random spatial filters.
pub fn init_video_state(
    cfg: &RunConfig,
    num_classes: usize,
    image_checkpoint: Option<&Path>,
) -> Result<VideoTrainState> {
    let arch = cfg.arch(num_classes);
    let residual = cfg.ablation.residual;
    let init_mode = cfg.ablation.temporal_init;
    let (encoder, attention) = match cfg.ablation.spatial_init {
        SpatialInit::ImageModel => {
            let path = image_checkpoint.ok_or_else(|| {
                CoreError::InvalidArgument(
                    "spatial_init=image_model requires a prior image checkpoint".into(),
                )
            })?;
            let (image_state, _) = load_image_checkpoint(path)?;
            if image_state.encoder.arch != arch {
                return Err(CoreError::Checkpoint(format!(
                    "image checkpoint architecture {:?} does not match run config {:?}",
                    image_state.encoder.arch, arch
                )));
            }
            let target = Encoder3dState::new_seeded(arch.clone(), residual, init_mode, 0)?;
            let encoder = transfer_spatial_weights(&image_state.encoder, &target)?;
            let mut attention = image_state.attention.clone();
            attention.t = cfg.attention.top_t;
            attention.tau = cfg.attention.tau;
            attention.full_grad = cfg.attention.full_grad;
            (encoder, attention)
        }
        SpatialInit::Generic => {
            let encoder = Encoder3dState::new_seeded(
                arch.clone(),
                residual,
                init_mode,
                rng_seed(cfg.seed, "video.generic_spatial"),
            )?;
            let mut attention =
                AttentionParams::identity(arch.embedding_dim(), cfg.attention.top_t, cfg.attention.tau);
            attention.full_grad = cfg.attention.full_grad;
            (encoder, attention)
        }
    };
    let mut disc_video_target = MultiLayerDiscriminatorState::new_seeded(
        DomainPair::WebVideoTarget,
        &arch.tap_dims(),
        cfg.model.disc_hidden,
        cfg.seed.wrapping_add(11),
    );
    if cfg.disc_init == DiscInit::Zero {
        disc_video_target.zero();
    }
    Ok(VideoTrainState {
        encoder,
        attention,
        disc_video_target,
    })
}

/// Trains the video model and writes `video_model.wda`, its sidecar, and
/// `metrics.jsonl` under `out_dir`.
pub fn train_video_stage(
    cfg: &RunConfig,
    dataset: &Dataset,
    image_checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<StageArtifacts> {
    cfg.validate_against(&dataset.manifest)?;
    std::fs::create_dir_all(out_dir)?;
    let mut state = init_video_state(cfg, dataset.num_classes(), image_checkpoint)?;
    let mut stream = BatchStream::new(dataset, cfg.batch, rng_seed(cfg.seed, "video.batches"))?;
    let mut opt = SgdMomentum::new(cfg.optimizer.learning_rate_video, cfg.optimizer.momentum);
    let mut w_opt = SgdMomentum::new(
        cfg.optimizer.learning_rate_video * cfg.attention.w_lr_scale,
        cfg.optimizer.momentum,
    );
    let mut writer = MetricsWriter::create(&out_dir.join("metrics.jsonl"))?;
    let steps = cfg.steps_video;
    let mut final_accuracy = 0.0;

    for step in 0..steps {
        let batch = stream.next_pair(dataset)?;
        let opts = StageLossOptions {
            attention: cfg.ablation.attention,
            domain_adaptation: cfg.ablation.domain_adaptation,
            beta: cfg.beta,
            lambda: cfg.lambda.at(step, steps),
            for_training: true,
        };
        let models = VideoModels {
            encoder: &state.encoder,
            attention: &state.attention,
            disc_video_target: &state.disc_video_target,
        };
        let video_batch = VideoBatch {
            web_chunks: &batch.web_chunks,
            web_chunk_labels: &batch.labels,
            target_chunks: &batch.target_chunks,
        };
        let mut loss = video_stage_loss(&models, &video_batch, &opts)?;
        if !loss.components.total.is_finite() {
            let reason = format!("non-finite loss {:?}", loss.components);
            let record = serde_json::json!({ "step": step, "reason": reason });
            let _ = std::fs::write(
                out_dir.join("abort.json"),
                serde_json::to_string_pretty(&record).unwrap_or_default(),
            );
            return Err(CoreError::TrainAbort { step, reason });
        }
        let total_node = loss.total;
        loss.graph.backward(total_node);

        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, (&tk, &tb)) in loss
            .encoder
            .temporal_kernels
            .iter()
            .zip(&loss.encoder.temporal_biases)
            .enumerate()
        {
            grads.insert(format!("stage{i}.temporal_kernel"), loss.graph.grad(tk).to_vec());
            grads.insert(format!("stage{i}.temporal_bias"), loss.graph.grad(tb).to_vec());
        }
        grads.insert("classifier.weight".into(), loss.graph.grad(loss.encoder.cls_weight).to_vec());
        grads.insert("classifier.bias".into(), loss.graph.grad(loss.encoder.cls_bias).to_vec());
        if let Some(w) = loss.attention_w {
            grads.insert("attention.w".into(), loss.graph.grad(w).to_vec());
        }
        if let Some(bound) = &loss.disc_video_target {
            for (l, (&w, &b)) in bound.weights.iter().zip(&bound.biases).enumerate() {
                grads.insert(format!("disc.V.layer{}.weight", l + 1), loss.graph.grad(w).to_vec());
                grads.insert(format!("disc.V.layer{}.bias", l + 1), loss.graph.grad(b).to_vec());
            }
        }
        let components = loss.components.clone();
        let disc_accuracy = loss.disc_accuracy;
        let entropy = loss.alpha_chunks.entropy();
        drop(loss);

        // frozen spatial parameters never appear in the gradient map
        for (name, t) in state.encoder.named_params_mut() {
            if !t.requires_grad {
                continue;
            }
            if let Some(g) = grads.get(&name) {
                opt.apply(&name, t, g);
            }
        }
        if let Some(g) = grads.get("attention.w") {
            w_opt.apply("attention.w", &mut state.attention.w, g);
        }
        for (name, t) in state.disc_video_target.named_params_mut() {
            if let Some(g) = grads.get(&name) {
                opt.apply(&name, t, g);
            }
        }

        let last = step + 1 == steps;
        if (step + 1) % cfg.eval_interval == 0 || last {
            let report = evaluate_video_state(&state.encoder, dataset)?;
            final_accuracy = report.accuracy;
            writer.append(MetricsRecord {
                step,
                stage: Stage::Video,
                loss_total: components.total,
                loss_ce_image: 0.0,
                loss_ce_frame: components.ce_frame,
                loss_domain_image_target: 0.0,
                loss_domain_video_target: components.domain_video_target,
                loss_domain_image_video: 0.0,
                target_accuracy: report.accuracy,
                disc_accuracy: [0.5, disc_accuracy, 0.5],
                attention_entropy: entropy,
            })?;
        }
    }

    let checkpoint = out_dir.join("video_model.wda");
    save_video_checkpoint(&checkpoint, &state, &cfg.attention, cfg.model.disc_hidden)?;
    Ok(StageArtifacts {
        checkpoint,
        metrics: writer.finish()?,
        final_accuracy,
    })
}

fn rng_seed(seed: u64, tag: &str) -> u64 {
    use rand::RngCore;
    rng::stream(seed, tag).next_u64()
}
