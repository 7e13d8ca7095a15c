//! Image-stage training: the triplet of web images, web video frames, and
//! unlabeled target frames through one tied encoder, optimizing the
//! attention-weighted cross-entropy plus beta times the three pairwise
//! domain losses in a single backward pass per step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::adversarial::{DomainPair, MultiLayerDiscriminatorState};
use crate::attention::{image_stage_loss, AttentionParams, ImageBatch, ImageModels, StageLossOptions};
use crate::numerics::rng;
use crate::webdata::{BatchStream, Dataset};
use crate::{CoreError, Result};

use super::checkpoint::{save_image_checkpoint, ImageTrainState};
use super::config::{DiscInit, RunConfig};
use super::eval::evaluate_image_state;
use super::metrics::{MetricsRecord, MetricsWriter, Stage};
use super::optimizer::SgdMomentum;

/// Outputs of one training stage.
#[derive(Debug, Clone)]
pub struct StageArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub final_accuracy: f64,
}

/// Seeded initial image-stage state for a run config.
pub fn init_image_state(cfg: &RunConfig, num_classes: usize) -> Result<ImageTrainState> {
    let arch = cfg.arch(num_classes);
    let encoder = crate::encoders::Encoder2dState::new_seeded(arch.clone(), cfg.seed)?;
    let mut attention = AttentionParams::identity(arch.embedding_dim(), cfg.attention.top_t, cfg.attention.tau);
    attention.full_grad = cfg.attention.full_grad;
    let dims = arch.tap_dims();
    let h = cfg.model.disc_hidden;
    let mut disc_image_target = MultiLayerDiscriminatorState::new_seeded(
        DomainPair::WebImageTarget,
        &dims,
        h,
        cfg.seed.wrapping_add(1),
    );
    let mut disc_video_target = MultiLayerDiscriminatorState::new_seeded(
        DomainPair::WebVideoTarget,
        &dims,
        h,
        cfg.seed.wrapping_add(2),
    );
    let mut disc_image_video = MultiLayerDiscriminatorState::new_seeded(
        DomainPair::WebImageWebVideo,
        &dims,
        h,
        cfg.seed.wrapping_add(3),
    );
    if cfg.disc_init == DiscInit::Zero {
        disc_image_target.zero();
        disc_video_target.zero();
        disc_image_video.zero();
    }
    Ok(ImageTrainState {
        encoder,
        attention,
        disc_image_target,
        disc_video_target,
        disc_image_video,
    })
}

fn write_abort(out_dir: &Path, step: usize, reason: &str) {
    let record = serde_json::json!({ "step": step, "reason": reason });
    let _ = std::fs::write(
        out_dir.join("abort.json"),
        serde_json::to_string_pretty(&record).unwrap_or_default(),
    );
}

/// Trains the image model and writes `image_model.wda`, its sidecar, and
/// `metrics.jsonl` under `out_dir`.
pub fn train_image_stage(cfg: &RunConfig, dataset: &Dataset, out_dir: &Path) -> Result<StageArtifacts> {
    cfg.validate_against(&dataset.manifest)?;
    std::fs::create_dir_all(out_dir)?;
    let mut state = init_image_state(cfg, dataset.num_classes())?;
    let mut stream = BatchStream::new(dataset, cfg.batch, rng_seed(cfg.seed, "image.batches"))?;
    let mut opt = SgdMomentum::new(cfg.optimizer.learning_rate_image, cfg.optimizer.momentum);
    let mut w_opt = SgdMomentum::new(
        cfg.optimizer.learning_rate_image * cfg.attention.w_lr_scale,
        cfg.optimizer.momentum,
    );
    let mut writer = MetricsWriter::create(&out_dir.join("metrics.jsonl"))?;
    let mut attention_log = if cfg.log_attention {
        Some(std::io::BufWriter::new(std::fs::File::create(
            out_dir.join("attention.jsonl"),
        )?))
    } else {
        None
    };
    let steps = cfg.steps_image;
    let mut final_accuracy = 0.0;

    for step in 0..steps {
        let batch = stream.next_triplet(dataset)?;
        let opts = StageLossOptions {
            attention: cfg.ablation.attention,
            domain_adaptation: cfg.ablation.domain_adaptation,
            beta: cfg.beta,
            lambda: cfg.lambda.at(step, steps),
            for_training: true,
        };
        let models = ImageModels {
            encoder: &state.encoder,
            attention: &state.attention,
            disc_image_target: &state.disc_image_target,
            disc_video_target: &state.disc_video_target,
            disc_image_video: &state.disc_image_video,
        };
        let image_batch = ImageBatch {
            web_images: &batch.images,
            web_image_labels: &batch.image_labels,
            web_frames: &batch.frames,
            web_frame_labels: &batch.frame_labels,
            target_frames: &batch.target_frames,
        };
        let mut loss = image_stage_loss(&models, &image_batch, &opts)?;
        if !loss.components.total.is_finite() {
            let reason = format!("non-finite loss {:?}", loss.components);
            write_abort(out_dir, step, &reason);
            return Err(CoreError::TrainAbort { step, reason });
        }
        let total_node = loss.total;
        loss.graph.backward(total_node);

        // pull gradients out before releasing the borrow on state
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, (&k, &b)) in loss.encoder.kernels.iter().zip(&loss.encoder.biases).enumerate() {
            grads.insert(format!("stage{i}.spatial_kernel"), loss.graph.grad(k).to_vec());
            grads.insert(format!("stage{i}.spatial_bias"), loss.graph.grad(b).to_vec());
        }
        grads.insert("classifier.weight".into(), loss.graph.grad(loss.encoder.cls_weight).to_vec());
        grads.insert("classifier.bias".into(), loss.graph.grad(loss.encoder.cls_bias).to_vec());
        if let Some(w) = loss.attention_w {
            grads.insert("attention.w".into(), loss.graph.grad(w).to_vec());
        }
        for (bound, disc) in [
            (&loss.disc_image_target, &state.disc_image_target),
            (&loss.disc_video_target, &state.disc_video_target),
            (&loss.disc_image_video, &state.disc_image_video),
        ] {
            if let Some(bound) = bound {
                let tag = disc.pair.short_name();
                for (l, (&w, &b)) in bound.weights.iter().zip(&bound.biases).enumerate() {
                    grads.insert(format!("disc.{tag}.layer{}.weight", l + 1), loss.graph.grad(w).to_vec());
                    grads.insert(format!("disc.{tag}.layer{}.bias", l + 1), loss.graph.grad(b).to_vec());
                }
            }
        }
        let components = loss.components.clone();
        let disc_accuracy = loss.disc_accuracy;
        let entropy = 0.5 * (loss.alpha_image.entropy() + loss.alpha_frame.entropy());
        if let Some(log) = attention_log.as_mut() {
            use std::io::Write;
            for (domain, alpha, labels) in [
                ("web_image", &loss.alpha_image, &batch.image_labels),
                ("web_video", &loss.alpha_frame, &batch.frame_labels),
            ] {
                let row = serde_json::json!({
                    "step": step,
                    "domain": domain,
                    "alpha": alpha.alpha.data(),
                    "labels": labels,
                });
                writeln!(log, "{row}")?;
            }
        }
        drop(loss);

        for (name, t) in state.encoder.named_params_mut() {
            if let Some(g) = grads.get(&name) {
                opt.apply(&name, t, g);
            }
        }
        if let Some(g) = grads.get("attention.w") {
            w_opt.apply("attention.w", &mut state.attention.w, g);
        }
        for disc in [
            &mut state.disc_image_target,
            &mut state.disc_video_target,
            &mut state.disc_image_video,
        ] {
            for (name, t) in disc.named_params_mut() {
                if let Some(g) = grads.get(&name) {
                    opt.apply(&name, t, g);
                }
            }
        }

        let last = step + 1 == steps;
        if (step + 1) % cfg.eval_interval == 0 || last {
            let report = evaluate_image_state(&state.encoder, dataset)?;
            final_accuracy = report.accuracy;
            writer.append(MetricsRecord {
                step,
                stage: Stage::Image,
                loss_total: components.total,
                loss_ce_image: components.ce_image,
                loss_ce_frame: components.ce_frame,
                loss_domain_image_target: components.domain_image_target,
                loss_domain_video_target: components.domain_video_target,
                loss_domain_image_video: components.domain_image_video,
                target_accuracy: report.accuracy,
                disc_accuracy,
                attention_entropy: entropy,
            })?;
        }
    }

    let checkpoint = out_dir.join("image_model.wda");
    save_image_checkpoint(&checkpoint, &state, &cfg.attention, cfg.model.disc_hidden)?;
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
