//! Seeded finite-difference fixtures shared by the `gradcheck` CLI
//! subcommand and the acceptance suite. Every trainable surface gets a toy
//! instance small enough to difference in well under a minute.

use rand::Rng;

use crate::adversarial::{
    discriminator_forward_graph, pairwise_domain_loss_graph, DomainPair, MultiLayerDiscriminatorState,
};
use crate::attention::{image_stage_loss, AttentionParams, ImageBatch, ImageModels, StageLossOptions};
use crate::encoders::{forward_3d, Encoder2dState, Encoder3dState, ModelArch, TemporalInit};
use crate::numerics::gradcheck::{finite_difference_gradcheck, GradCheckReport};
use crate::numerics::graph::Graph;
use crate::numerics::rng;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

const EPSILON: f64 = 1e-4;
const TOLERANCE: f64 = 1e-3;

fn toy_arch() -> ModelArch {
    ModelArch {
        input_size: 8,
        stage_channels: vec![4, 6],
        spatial_kernel: 3,
        temporal_kernel: 3,
        frames_per_chunk: 4,
        num_classes: 3,
    }
}

fn unit_images(n: usize, hw: usize, seed: u64, tag: &str) -> Tensor {
    let mut r = rng::stream(seed, tag);
    Tensor::new(
        vec![n, 3, hw, hw],
        (0..n * 3 * hw * hw).map(|_| r.gen_range(0.0..1.0)).collect(),
    )
    .expect("consistent dims")
}

fn numerics_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::stream(seed, "gradcheck.numerics");
    let x = Tensor::from_vec((0..6).map(|_| r.gen_range(-2.0..2.0)).collect());
    let sum_sq = finite_difference_gradcheck(
        "numerics.sum_of_squares",
        &x,
        |v| {
            let mut g = Graph::new();
            let p = g.leaf(vec![v.len()], v.to_vec(), true);
            let sq = g.mul(p, p);
            let loss = g.sum_all(sq);
            (g, p, loss)
        },
        1e-5,
        1e-6,
    )?;
    let constant = finite_difference_gradcheck(
        "numerics.constant",
        &x,
        |v| {
            let mut g = Graph::new();
            let p = g.leaf(vec![v.len()], v.to_vec(), true);
            let z = g.scale(p, 0.0);
            let loss = g.sum_all(z);
            (g, p, loss)
        },
        1e-5,
        1e-6,
    )?;
    Ok(vec![sum_sq, constant])
}

fn encoder_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let arch = toy_arch();
    let video = Encoder3dState::new_seeded(arch.clone(), true, TemporalInit::Identity, seed)?;
    let chunk = unit_images(arch.frames_per_chunk, arch.input_size, seed, "gradcheck.chunk");
    let frames = arch.frames_per_chunk;
    // sum of logits as the scalar through the full (2+1)D stack
    let build_with = |state: &Encoder3dState| {
        let mut g = Graph::new();
        let bound = state.bind(&mut g, true);
        let x = g.leaf_tensor(&chunk, false);
        // chunk is [frames, 3, h, w] already frame-major for batch 1
        let out = forward_3d(&mut g, &bound, x, frames);
        let loss = g.sum_all(out.logits);
        (g, bound, loss)
    };

    let mut reports = Vec::new();
    for stage in 0..video.blocks.len() {
        let report = finite_difference_gradcheck(
            &format!("encoders.stage{stage}.temporal_kernel"),
            &video.blocks[stage].temporal_kernel,
            |v| {
                let mut s = video.clone();
                s.blocks[stage].temporal_kernel =
                    Tensor::from_f64(s.blocks[stage].temporal_kernel.shape().to_vec(), v)
                        .expect("consistent dims")
                        .with_grad();
                let (g, bound, loss) = build_with(&s);
                (g, bound.temporal_kernels[stage], loss)
            },
            EPSILON,
            TOLERANCE,
        )?;
        reports.push(report);
    }
    // spatial kernel of the 2D encoder through a weighted-CE loss
    let image = Encoder2dState::new_seeded(arch.clone(), seed.wrapping_add(5))?;
    let images = unit_images(4, arch.input_size, seed, "gradcheck.images");
    let labels = [0usize, 1, 2, 0];
    let report = finite_difference_gradcheck(
        "encoders.stage0.spatial_kernel",
        &image.stages[0].spatial_kernel,
        |v| {
            let mut s = image.clone();
            s.stages[0].spatial_kernel = Tensor::from_f64(s.stages[0].spatial_kernel.shape().to_vec(), v)
                .expect("consistent dims")
                .with_grad();
            let mut g = Graph::new();
            let bound = s.bind(&mut g, true);
            let x = g.leaf_tensor(&images, false);
            let out = crate::encoders::forward_2d(&mut g, &bound, x);
            let n = images.shape()[0];
            let alpha = g.leaf(vec![n], vec![1.0 / n as f64; n], false);
            let loss = g.weighted_ce(out.logits, &labels, alpha);
            (g, bound.kernels[0], loss)
        },
        EPSILON,
        TOLERANCE,
    )?;
    reports.push(report);
    Ok(reports)
}

/// Compares the gradient through a GRL against the same computation with the
/// layer removed: they must match to -lambda times each other almost exactly.
fn grl_scaling_check(seed: u64, lambda: f64) -> GradCheckReport {
    let mut r = rng::stream(seed, "gradcheck.grl");
    let n = 6usize;
    let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let run = |with_grl: bool| -> Vec<f64> {
        let mut g = Graph::new();
        let p = g.leaf(vec![n], x.clone(), true);
        let h = if with_grl { g.grl(p, lambda) } else { p };
        let wv = g.leaf(vec![n], w.clone(), false);
        let m = g.mul(h, wv);
        let act = g.relu(m);
        let loss = g.sum_all(act);
        g.backward(loss);
        g.grad(p).to_vec()
    };
    let with = run(true);
    let without = run(false);
    let mut max_rel = 0.0f64;
    for (a, b) in with.iter().zip(&without) {
        let want = -lambda * b;
        let rel = (a - want).abs() / want.abs().max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    GradCheckReport {
        parameter_name: format!("adversarial.grl_scaling(lambda={lambda})"),
        max_relative_error: max_rel,
        passed: max_rel <= 1e-6,
    }
}

fn adversarial_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = vec![grl_scaling_check(seed, 1.0), grl_scaling_check(seed, 0.5)];

    // finite differences through the full pairwise loss for each layer
    let dims = vec![4usize, 6];
    let disc = MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageTarget, &dims, 5, seed);
    let mut r = rng::stream(seed, "gradcheck.taps");
    let mk = |r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize| -> Tensor {
        Tensor::new(vec![n, d], (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("dims")
    };
    let taps_first = [mk(&mut r, 3, 4), mk(&mut r, 3, 6)];
    let taps_second = [mk(&mut r, 3, 4), mk(&mut r, 3, 6)];
    for layer in 0..disc.layers.len() {
        let report = finite_difference_gradcheck(
            &format!("adversarial.disc.layer{}.weight", layer + 1),
            &disc.layers[layer].weight,
            |v| {
                let mut d2 = disc.clone();
                d2.layers[layer].weight = Tensor::from_f64(d2.layers[layer].weight.shape().to_vec(), v)
                    .expect("dims")
                    .with_grad();
                let mut g = Graph::new();
                let bound = d2.bind(&mut g, true);
                let tf: Vec<_> = taps_first.iter().map(|t| g.leaf_tensor(t, false)).collect();
                let ts: Vec<_> = taps_second.iter().map(|t| g.leaf_tensor(t, false)).collect();
                let pf = discriminator_forward_graph(&mut g, &bound, &tf);
                let ps = discriminator_forward_graph(&mut g, &bound, &ts);
                let loss = pairwise_domain_loss_graph(&mut g, pf, ps);
                (g, bound.weights[layer], loss)
            },
            EPSILON,
            TOLERANCE,
        )?;
        reports.push(report);
    }
    Ok(reports)
}

fn attention_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let arch = toy_arch();
    let enc = Encoder2dState::new_seeded(arch.clone(), seed)?;
    let att = AttentionParams::identity(arch.embedding_dim(), 2, 0.5);
    let dims = arch.tap_dims();
    let discs = [
        MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageTarget, &dims, 4, seed.wrapping_add(1)),
        MultiLayerDiscriminatorState::new_seeded(DomainPair::WebVideoTarget, &dims, 4, seed.wrapping_add(2)),
        MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageWebVideo, &dims, 4, seed.wrapping_add(3)),
    ];
    let imgs = unit_images(4, arch.input_size, seed, "gradcheck.att.images");
    let frms = unit_images(4, arch.input_size, seed, "gradcheck.att.frames");
    let tgts = unit_images(4, arch.input_size, seed, "gradcheck.att.target");
    let labels_i = [0usize, 1, 2, 0];
    let labels_f = [1usize, 2, 0, 1];
    let opts = StageLossOptions {
        attention: true,
        domain_adaptation: true,
        beta: 0.1,
        lambda: 1.0,
        for_training: true,
    };
    let d = arch.embedding_dim();
    let report = finite_difference_gradcheck(
        "attention.w",
        &att.w,
        |wv| {
            let mut att2 = att.clone();
            att2.w = Tensor::from_f64(vec![d, d], wv).expect("dims").with_grad();
            let models = ImageModels {
                encoder: &enc,
                attention: &att2,
                disc_image_target: &discs[0],
                disc_video_target: &discs[1],
                disc_image_video: &discs[2],
            };
            let batch = ImageBatch {
                web_images: &imgs,
                web_image_labels: &labels_i,
                web_frames: &frms,
                web_frame_labels: &labels_f,
                target_frames: &tgts,
            };
            let loss = image_stage_loss(&models, &batch, &opts).expect("toy batch is valid");
            (loss.graph, loss.attention_w.expect("attention on"), loss.total)
        },
        EPSILON,
        TOLERANCE,
    )?;
    Ok(vec![report])
}

/// Runs the seeded toy gradchecks for one module (or `all`).
pub fn gradcheck_suite(module: &str, seed: u64) -> Result<Vec<GradCheckReport>> {
    match module {
        "numerics" => numerics_checks(seed),
        "encoders" => encoder_checks(seed),
        "adversarial" => adversarial_checks(seed),
        "attention" => attention_checks(seed),
        "all" => {
            let mut out = numerics_checks(seed)?;
            out.extend(encoder_checks(seed)?);
            out.extend(adversarial_checks(seed)?);
            out.extend(attention_checks(seed)?);
            Ok(out)
        }
        other => Err(CoreError::InvalidArgument(format!(
            "unknown gradcheck module {other:?} (expected numerics, encoders, adversarial, attention, or all)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_suite_passes_everywhere() {
        let reports = gradcheck_suite("all", 1234).unwrap();
        assert!(reports.len() >= 7);
        for r in &reports {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn unknown_module_is_an_error() {
        assert!(gradcheck_suite("bogus", 1).is_err());
    }
}
