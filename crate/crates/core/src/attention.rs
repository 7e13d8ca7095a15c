//! Attention-based instance weighting and the stage losses.
//!
//! Each source example is scored against every target example in the batch
//! through a learned bilinear form, the top-T scores per source example are
//! summed, and a temperature softmax over the source batch turns the sums
//! into nonnegative weights summing to 1. Those weights multiply the
//! per-example cross-entropy, so irrelevant web examples are downweighted in
//! a soft way. Embeddings are treated as constants inside the scoring by
//! default (gradients reach only the bilinear matrix); `full_grad` re-enables
//! flow into the encoder.

use rand::Rng;

use crate::adversarial::{
    discriminator_forward_graph, pairwise_domain_loss_graph, BoundDisc, MultiLayerDiscriminatorState,
};
use crate::encoders::{
    chunk_to_frame_major, forward_2d, forward_3d, Bound2d, Bound3d, Encoder2dState, Encoder3dState,
};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

/// Which source domain a weight vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightDomain {
    WebImage,
    WebVideo,
}

/// Bilinear scoring matrix plus pooling and temperature settings.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// [d, d] similarity matrix, learned with the rest of the model.
    pub w: Tensor,
    /// How many of each source example's per-target scores are summed.
    pub t: usize,
    /// Softmax temperature.
    pub tau: f64,
    /// When true, gradients from the scores also flow into the embeddings.
    pub full_grad: bool,
}

impl AttentionParams {
    /// Identity-initialized scoring matrix: the bilinear form starts as the
    /// cosine similarity between the (normalized) embeddings.
    pub fn identity(d: usize, t: usize, tau: f64) -> Self {
        let mut w = Tensor::zeros(vec![d, d]);
        for i in 0..d {
            w.data_mut()[i * d + i] = 1.0;
        }
        AttentionParams {
            w: w.with_grad(),
            t,
            tau,
            full_grad: false,
        }
    }

    pub fn validate(&self, target_batch: usize) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "attention temperature must be positive, got {}",
                self.tau
            )));
        }
        if self.t < 1 || self.t > target_batch {
            return Err(CoreError::InvalidArgument(format!(
                "attention top-T={} out of range for target batch of {}",
                self.t, target_batch
            )));
        }
        Ok(())
    }
}

/// Per-batch normalized weights over a source batch.
#[derive(Debug, Clone)]
pub struct AttentionBatchWeights {
    pub alpha: Tensor,
    pub domain: WeightDomain,
}

impl AttentionBatchWeights {
    pub fn entropy(&self) -> f64 {
        -self
            .alpha
            .data()
            .iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| (a as f64) * (a as f64).ln())
            .sum::<f64>()
    }
}

/// Bilinear scores e[i, k] = source[i] . W . target[k].
pub fn attention_scores(source_emb: &Tensor, target_emb: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (ss, ts, ws) = (source_emb.shape(), target_emb.shape(), w.shape());
    if ss.len() != 2 || ts.len() != 2 || ws.len() != 2 {
        return Err(CoreError::shape(
            "attention_scores",
            "rank-2 source, target, and W",
            format!("{ss:?}, {ts:?}, {ws:?}"),
        ));
    }
    let d = ss[1];
    if ts[1] != d || ws != [d, d] {
        return Err(CoreError::shape(
            "attention_scores",
            format!("matching embedding dim {d}"),
            format!("target {:?}, W {:?}", ts, ws),
        ));
    }
    let (n, m) = (ss[0], ts[0]);
    let sv = source_emb.data();
    let tv = target_emb.data();
    let wv = w.data();
    let mut out = vec![0.0f32; n * m];
    // u = source . W, then e = u . target^T, accumulated in f64
    let mut u = vec![0.0f64; d];
    for i in 0..n {
        let srow = &sv[i * d..(i + 1) * d];
        for (c, uc) in u.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for r in 0..d {
                acc += srow[r] as f64 * wv[r * d + c] as f64;
            }
            *uc = acc;
        }
        for k in 0..m {
            let trow = &tv[k * d..(k + 1) * d];
            let mut acc = 0.0f64;
            for c in 0..d {
                acc += u[c] * trow[c] as f64;
            }
            out[i * m + k] = acc as f32;
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Sum of the T largest entries of a score row; ties broken by lower index.
pub fn top_t_sum(score_row: &Tensor, t: usize) -> Result<f64> {
    if score_row.rank() != 1 {
        return Err(CoreError::shape(
            "top_t_sum",
            "rank-1 score row",
            format!("{:?}", score_row.shape()),
        ));
    }
    let m = score_row.numel();
    if t < 1 || t > m {
        return Err(CoreError::InvalidArgument(format!(
            "top_t_sum: T={t} out of range for row of {m}"
        )));
    }
    let row = score_row.data();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&p, &q| {
        row[q]
            .partial_cmp(&row[p])
            .expect("scores are finite")
            .then(p.cmp(&q))
    });
    Ok(order.iter().take(t).map(|&j| row[j] as f64).sum())
}

/// Temperature softmax with max-subtraction over top-T-pooled scores.
pub fn attention_weights(s: &Tensor, tau: f64, domain: WeightDomain) -> Result<AttentionBatchWeights> {
    if s.rank() != 1 || s.numel() == 0 {
        return Err(CoreError::shape(
            "attention_weights",
            "non-empty rank-1 scores",
            format!("{:?}", s.shape()),
        ));
    }
    if tau <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "attention temperature must be positive, got {tau}"
        )));
    }
    let sv = s.data();
    let maxv = sv.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = sv.iter().map(|&x| ((x as f64 - maxv) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let alpha: Vec<f32> = exps.iter().map(|&e| (e / z) as f32).collect();
    Ok(AttentionBatchWeights {
        alpha: Tensor::from_vec(alpha),
        domain,
    })
}

/// Weighted cross-entropy: sum_i alpha_i * ce_i. With uniform weights this is
/// exactly the mean cross-entropy.
pub fn weighted_ce_loss(logits: &Tensor, labels: &[usize], alpha: &AttentionBatchWeights) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(CoreError::shape("weighted_ce_loss", "[n, l] logits", format!("{s:?}")));
    }
    let (n, l) = (s[0], s[1]);
    if labels.len() != n || alpha.alpha.numel() != n {
        return Err(CoreError::shape(
            "weighted_ce_loss",
            format!("{n} labels and weights"),
            format!("{} labels, {} weights", labels.len(), alpha.alpha.numel()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
        return Err(CoreError::InvalidArgument(format!(
            "label {bad} out of range for {l} classes"
        )));
    }
    let lv = logits.data();
    let av = alpha.alpha.data();
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = &lv[i * l..(i + 1) * l];
        let maxv = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&x| (x as f64 - maxv).exp()).sum();
        let ce = z.ln() + maxv - row[labels[i]] as f64;
        loss += av[i] as f64 * ce;
    }
    Ok(loss)
}

/// Builds the attention weighting subgraph: detached (by default) source and
/// target embeddings are scaled to unit norm, scored through the bilinear
/// matrix, top-T pooled per source example, and softmaxed with temperature.
/// The normalization makes the weighting magnitude-invariant: a clutter frame
/// with large activations cannot buy similarity through sheer embedding norm,
/// and the score scale stays stationary as the encoder's activations grow.
pub fn attention_alpha_graph(
    g: &mut Graph,
    source_emb: NodeId,
    target_emb: NodeId,
    w: NodeId,
    params: &AttentionParams,
) -> NodeId {
    let (src, tgt) = if params.full_grad {
        (source_emb, target_emb)
    } else {
        (g.detach(source_emb), g.detach(target_emb))
    };
    let src = g.row_normalize(src);
    let tgt = g.row_normalize(tgt);
    // source . W . target^T == matmul_nt(source, matmul_nt(target, W))
    let tw = g.matmul_nt(tgt, w);
    let scores = g.matmul_nt(src, tw);
    let pooled = g.topt_rows(scores, params.t);
    g.softmax_temp(pooled, params.tau)
}

fn uniform_alpha(g: &mut Graph, n: usize) -> NodeId {
    g.leaf(vec![n], vec![1.0 / n as f64; n], false)
}

// ---- stage losses --------------------------------------------------------------

/// Ablation and weighting knobs shared by both stage losses.
#[derive(Debug, Clone)]
pub struct StageLossOptions {
    /// Attention on/off; off means uniform weights and no gradient into W.
    pub attention: bool,
    /// Domain adaptation on/off; off drops the adversarial terms entirely.
    pub domain_adaptation: bool,
    /// Tradeoff between weighted classification and domain adaptation.
    pub beta: f64,
    /// Gradient reversal strength for this step.
    pub lambda: f64,
    /// Bind parameters as trainable leaves (true during training).
    pub for_training: bool,
}

/// One image-stage step's inputs: a batch from each of the three domains.
pub struct ImageBatch<'a> {
    pub web_images: &'a Tensor,
    pub web_image_labels: &'a [usize],
    pub web_frames: &'a Tensor,
    pub web_frame_labels: &'a [usize],
    pub target_frames: &'a Tensor,
}

/// The image-stage models: tied encoder, attention matrix, one discriminator
/// per domain pair.
pub struct ImageModels<'a> {
    pub encoder: &'a Encoder2dState,
    pub attention: &'a AttentionParams,
    pub disc_image_target: &'a MultiLayerDiscriminatorState,
    pub disc_video_target: &'a MultiLayerDiscriminatorState,
    pub disc_image_video: &'a MultiLayerDiscriminatorState,
}

/// Scalar components of a composed stage loss.
#[derive(Debug, Clone, Default)]
pub struct LossComponents {
    pub ce_image: f64,
    pub ce_frame: f64,
    pub domain_image_target: f64,
    pub domain_video_target: f64,
    pub domain_image_video: f64,
    pub total: f64,
}

/// A built image-stage tape, ready for `backward` on `total`.
pub struct ImageStageLoss {
    pub graph: Graph,
    pub total: NodeId,
    pub components: LossComponents,
    pub encoder: Bound2d,
    pub attention_w: Option<NodeId>,
    pub disc_image_target: Option<BoundDisc>,
    pub disc_video_target: Option<BoundDisc>,
    pub disc_image_video: Option<BoundDisc>,
    pub alpha_image: AttentionBatchWeights,
    pub alpha_frame: AttentionBatchWeights,
    /// Per-pair (correct fraction) of the discriminators on this step's batches.
    pub disc_accuracy: [f64; 3],
}

fn batch_of(t: &Tensor) -> usize {
    t.shape()[0]
}

fn disc_accuracy(first: &[f64], second: &[f64]) -> f64 {
    let correct = first.iter().filter(|&&p| p > 0.5).count()
        + second.iter().filter(|&&p| p < 0.5).count();
    correct as f64 / (first.len() + second.len()) as f64
}

/// Composes the image-stage loss: attention-weighted cross-entropy on web
/// images and web video frames, plus beta times the three pairwise domain
/// losses, all through one tied encoder.
pub fn image_stage_loss(
    models: &ImageModels<'_>,
    batch: &ImageBatch<'_>,
    opts: &StageLossOptions,
) -> Result<ImageStageLoss> {
    let (n_img, n_frm, n_tgt) = (
        batch_of(batch.web_images),
        batch_of(batch.web_frames),
        batch_of(batch.target_frames),
    );
    if n_tgt == 0 {
        return Err(CoreError::InvalidArgument(
            "image_stage_loss: target batch is required by both attention and domain adaptation".into(),
        ));
    }
    if batch.web_image_labels.len() != n_img || batch.web_frame_labels.len() != n_frm {
        return Err(CoreError::InvalidArgument(
            "image_stage_loss: label count does not match batch".into(),
        ));
    }
    if opts.attention {
        models.attention.validate(n_tgt)?;
    }

    let mut g = Graph::new();
    let enc = models.encoder.bind(&mut g, opts.for_training);
    let x_img = g.leaf_tensor(batch.web_images, false);
    let x_frm = g.leaf_tensor(batch.web_frames, false);
    let x_tgt = g.leaf_tensor(batch.target_frames, false);
    let out_img = forward_2d(&mut g, &enc, x_img);
    let out_frm = forward_2d(&mut g, &enc, x_frm);
    let out_tgt = forward_2d(&mut g, &enc, x_tgt);

    // attention weights per source domain, always computed against the same
    // target batch
    let (alpha_img, alpha_frm, w_node) = if opts.attention {
        let w = g.leaf_tensor(&models.attention.w, opts.for_training);
        let a_i = attention_alpha_graph(&mut g, out_img.embeddings, out_tgt.embeddings, w, models.attention);
        let a_v = attention_alpha_graph(&mut g, out_frm.embeddings, out_tgt.embeddings, w, models.attention);
        (a_i, a_v, Some(w))
    } else {
        (uniform_alpha(&mut g, n_img), uniform_alpha(&mut g, n_frm), None)
    };

    let ce_image = g.weighted_ce(out_img.logits, batch.web_image_labels, alpha_img);
    let ce_frame = g.weighted_ce(out_frm.logits, batch.web_frame_labels, alpha_frm);
    let mut total = g.add(ce_image, ce_frame);

    let mut components = LossComponents {
        ce_image: g.scalar_value(ce_image),
        ce_frame: g.scalar_value(ce_frame),
        ..Default::default()
    };
    let mut bound_i = None;
    let mut bound_v = None;
    let mut bound_b = None;
    let mut accuracies = [0.5f64; 3];

    if opts.domain_adaptation {
        let grl_taps = |g: &mut Graph, taps: &[NodeId]| -> Vec<NodeId> {
            taps.iter().map(|&t| g.grl(t, opts.lambda)).collect()
        };
        let taps_img = grl_taps(&mut g, &out_img.taps);
        let taps_frm = grl_taps(&mut g, &out_frm.taps);
        let taps_tgt = grl_taps(&mut g, &out_tgt.taps);

        let di = models.disc_image_target.bind(&mut g, opts.for_training);
        let dv = models.disc_video_target.bind(&mut g, opts.for_training);
        let db = models.disc_image_video.bind(&mut g, opts.for_training);

        // Eq. pair conventions: target is the "first" domain against each web
        // domain; web images come first in the image/video pair.
        let p_i_first = discriminator_forward_graph(&mut g, &di, &taps_tgt);
        let p_i_second = discriminator_forward_graph(&mut g, &di, &taps_img);
        let p_v_first = discriminator_forward_graph(&mut g, &dv, &taps_tgt);
        let p_v_second = discriminator_forward_graph(&mut g, &dv, &taps_frm);
        let p_b_first = discriminator_forward_graph(&mut g, &db, &taps_img);
        let p_b_second = discriminator_forward_graph(&mut g, &db, &taps_frm);

        let l_i = pairwise_domain_loss_graph(&mut g, p_i_first, p_i_second);
        let l_v = pairwise_domain_loss_graph(&mut g, p_v_first, p_v_second);
        let l_b = pairwise_domain_loss_graph(&mut g, p_b_first, p_b_second);

        components.domain_image_target = g.scalar_value(l_i);
        components.domain_video_target = g.scalar_value(l_v);
        components.domain_image_video = g.scalar_value(l_b);
        accuracies = [
            disc_accuracy(g.value(p_i_first), g.value(p_i_second)),
            disc_accuracy(g.value(p_v_first), g.value(p_v_second)),
            disc_accuracy(g.value(p_b_first), g.value(p_b_second)),
        ];

        let sum_iv = g.add(l_i, l_v);
        let domain = g.add(sum_iv, l_b);
        let scaled = g.scale(domain, opts.beta);
        total = g.add(total, scaled);
        bound_i = Some(di);
        bound_v = Some(dv);
        bound_b = Some(db);
    }

    components.total = g.scalar_value(total);
    let alpha_image = AttentionBatchWeights {
        alpha: g.to_tensor(alpha_img),
        domain: WeightDomain::WebImage,
    };
    let alpha_frame = AttentionBatchWeights {
        alpha: g.to_tensor(alpha_frm),
        domain: WeightDomain::WebVideo,
    };
    Ok(ImageStageLoss {
        graph: g,
        total,
        components,
        encoder: enc,
        attention_w: w_node,
        disc_image_target: bound_i,
        disc_video_target: bound_v,
        disc_image_video: bound_b,
        alpha_image,
        alpha_frame,
        disc_accuracy: accuracies,
    })
}

/// One video-stage step's inputs.
pub struct VideoBatch<'a> {
    /// [b, 3, frames, h, w]
    pub web_chunks: &'a Tensor,
    pub web_chunk_labels: &'a [usize],
    /// [b, 3, frames, h, w]
    pub target_chunks: &'a Tensor,
}

pub struct VideoModels<'a> {
    pub encoder: &'a Encoder3dState,
    pub attention: &'a AttentionParams,
    pub disc_video_target: &'a MultiLayerDiscriminatorState,
}

/// A built video-stage tape.
pub struct VideoStageLoss {
    pub graph: Graph,
    pub total: NodeId,
    pub components: LossComponents,
    pub encoder: Bound3d,
    pub attention_w: Option<NodeId>,
    pub disc_video_target: Option<BoundDisc>,
    pub alpha_chunks: AttentionBatchWeights,
    pub disc_accuracy: f64,
}

/// Composes the video-stage loss: attention-weighted cross-entropy on web
/// video chunks plus beta times the single webvideo-target domain loss.
pub fn video_stage_loss(
    models: &VideoModels<'_>,
    batch: &VideoBatch<'_>,
    opts: &StageLossOptions,
) -> Result<VideoStageLoss> {
    let n_web = batch_of(batch.web_chunks);
    let n_tgt = batch_of(batch.target_chunks);
    if n_tgt == 0 {
        return Err(CoreError::InvalidArgument(
            "video_stage_loss: target chunk batch is required".into(),
        ));
    }
    if batch.web_chunk_labels.len() != n_web {
        return Err(CoreError::InvalidArgument(
            "video_stage_loss: label count does not match batch".into(),
        ));
    }
    if opts.attention {
        models.attention.validate(n_tgt)?;
    }
    let frames = models.encoder.arch.frames_per_chunk;
    let web_fm = chunk_to_frame_major(batch.web_chunks)?;
    let tgt_fm = chunk_to_frame_major(batch.target_chunks)?;

    let mut g = Graph::new();
    let enc = models.encoder.bind(&mut g, opts.for_training);
    let x_web = g.leaf_tensor(&web_fm, false);
    let x_tgt = g.leaf_tensor(&tgt_fm, false);
    let out_web = forward_3d(&mut g, &enc, x_web, frames);
    let out_tgt = forward_3d(&mut g, &enc, x_tgt, frames);

    let (alpha, w_node) = if opts.attention {
        let w = g.leaf_tensor(&models.attention.w, opts.for_training);
        let a = attention_alpha_graph(&mut g, out_web.embeddings, out_tgt.embeddings, w, models.attention);
        (a, Some(w))
    } else {
        (uniform_alpha(&mut g, n_web), None)
    };

    let ce = g.weighted_ce(out_web.logits, batch.web_chunk_labels, alpha);
    let mut total = ce;
    let mut components = LossComponents {
        ce_frame: g.scalar_value(ce),
        ..Default::default()
    };
    let mut bound_disc = None;
    let mut accuracy = 0.5f64;

    if opts.domain_adaptation {
        let taps_web: Vec<NodeId> = out_web.taps.iter().map(|&t| g.grl(t, opts.lambda)).collect();
        let taps_tgt: Vec<NodeId> = out_tgt.taps.iter().map(|&t| g.grl(t, opts.lambda)).collect();
        let dv = models.disc_video_target.bind(&mut g, opts.for_training);
        let p_first = discriminator_forward_graph(&mut g, &dv, &taps_tgt);
        let p_second = discriminator_forward_graph(&mut g, &dv, &taps_web);
        let l_v = pairwise_domain_loss_graph(&mut g, p_first, p_second);
        components.domain_video_target = g.scalar_value(l_v);
        accuracy = disc_accuracy(g.value(p_first), g.value(p_second));
        let scaled = g.scale(l_v, opts.beta);
        total = g.add(total, scaled);
        bound_disc = Some(dv);
    }

    components.total = g.scalar_value(total);
    let alpha_chunks = AttentionBatchWeights {
        alpha: g.to_tensor(alpha),
        domain: WeightDomain::WebVideo,
    };
    Ok(VideoStageLoss {
        graph: g,
        total,
        components,
        encoder: enc,
        attention_w: w_node,
        disc_video_target: bound_disc,
        alpha_chunks,
        disc_accuracy: accuracy,
    })
}

/// Seeded random embeddings helper shared by tests and the gradcheck CLI.
pub fn seeded_embeddings(n: usize, d: usize, seed: u64, tag: &str) -> Tensor {
    let mut r = rng::stream(seed, tag);
    Tensor::new(vec![n, d], (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("consistent dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ModelArch;

    #[test]
    fn identity_w_reduces_to_dot_product() {
        let src = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let tgt = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let w = AttentionParams::identity(2, 1, 1.0).w;
        let e = attention_scores(&src, &tgt, &w).unwrap();
        assert_eq!(e.data(), &[1.0]);
    }

    #[test]
    fn zero_w_gives_zero_scores() {
        let src = seeded_embeddings(3, 4, 1, "t.src");
        let tgt = seeded_embeddings(2, 4, 2, "t.tgt");
        let w = Tensor::zeros(vec![4, 4]);
        let e = attention_scores(&src, &tgt, &w).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_matrix_product() {
        // W=[[1,2],[0,1]], source=[[1,1],[0,1]], target=[[1,0],[0,1]]
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        let src = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let tgt = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let e = attention_scores(&src, &tgt, &w).unwrap();
        assert_eq!(e.data(), &[1.0, 3.0, 0.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let src = seeded_embeddings(3, 4, 1, "t.src");
        let tgt = seeded_embeddings(2, 5, 2, "t.tgt");
        let w = Tensor::zeros(vec![4, 4]);
        assert!(attention_scores(&src, &tgt, &w).is_err());
    }

    #[test]
    fn top_t_examples() {
        let row = Tensor::from_vec(vec![3.0, 1.0, 2.0]);
        assert_eq!(top_t_sum(&row, 2).unwrap(), 5.0);
        assert_eq!(top_t_sum(&row, 1).unwrap(), 3.0);
        assert_eq!(top_t_sum(&row, 3).unwrap(), 6.0);
        assert!(top_t_sum(&row, 4).is_err());
        assert!(top_t_sum(&row, 0).is_err());
    }

    #[test]
    fn uniform_scores_give_uniform_weights() {
        let s = Tensor::from_vec(vec![0.7; 4]);
        let w = attention_weights(&s, 0.5, WeightDomain::WebImage).unwrap();
        for &a in w.alpha.data() {
            assert!((a - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn analytic_softmax_values() {
        let s = Tensor::from_vec(vec![std::f32::consts::LN_2, 0.0]);
        let w = attention_weights(&s, 1.0, WeightDomain::WebImage).unwrap();
        assert!((w.alpha.data()[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((w.alpha.data()[1] - 1.0 / 3.0).abs() < 1e-6);

        let sharp = Tensor::from_vec(vec![1.0, 0.0]);
        let w = attention_weights(&sharp, 0.1, WeightDomain::WebVideo).unwrap();
        assert!((w.alpha.data()[0] - 0.9999546).abs() < 1e-6, "{}", w.alpha.data()[0]);
        assert!((w.alpha.data()[1] - 0.0000454).abs() < 1e-6);
    }

    #[test]
    fn weights_sum_to_one_and_are_nonnegative() {
        for seed in 0..20u64 {
            let s = seeded_embeddings(8, 1, seed, "t.scores");
            let s = Tensor::from_vec(s.data().to_vec());
            let w = attention_weights(&s, 0.5, WeightDomain::WebImage).unwrap();
            let sum: f64 = w.alpha.data().iter().map(|&a| a as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(w.alpha.data().iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn shift_invariance() {
        let s = Tensor::from_vec(vec![0.2, -1.0, 0.7, 0.0]);
        let shifted = Tensor::from_vec(s.data().iter().map(|&x| x + 5.0).collect());
        let a = attention_weights(&s, 0.5, WeightDomain::WebImage).unwrap();
        let b = attention_weights(&shifted, 0.5, WeightDomain::WebImage).unwrap();
        for (x, y) in a.alpha.data().iter().zip(b.alpha.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn monotonicity_in_own_score() {
        let base = Tensor::from_vec(vec![0.5, 0.1, -0.3]);
        let bumped = Tensor::from_vec(vec![0.6, 0.1, -0.3]);
        let a = attention_weights(&base, 0.5, WeightDomain::WebImage).unwrap();
        let b = attention_weights(&bumped, 0.5, WeightDomain::WebImage).unwrap();
        assert!(b.alpha.data()[0] > a.alpha.data()[0]);
    }

    #[test]
    fn high_temperature_limit_is_uniform() {
        let s = Tensor::from_vec(vec![3.0, -2.0, 0.5, 1.0]);
        let w = attention_weights(&s, 1e6, WeightDomain::WebImage).unwrap();
        for &a in w.alpha.data() {
            assert!((a - 0.25).abs() < 1e-4);
        }
    }

    #[test]
    fn uniform_alpha_equals_mean_ce() {
        let logits = Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 0.3, 0.8, -0.2]).unwrap();
        let labels = [0usize, 1];
        let uniform = AttentionBatchWeights {
            alpha: Tensor::from_vec(vec![0.5, 0.5]),
            domain: WeightDomain::WebImage,
        };
        let weighted = weighted_ce_loss(&logits, &labels, &uniform).unwrap();
        // plain mean CE computed by hand
        let mean: f64 = (0..2)
            .map(|i| {
                let row: Vec<f64> = logits.data()[i * 3..(i + 1) * 3].iter().map(|&x| x as f64).collect();
                let z: f64 = row.iter().map(|x| x.exp()).sum();
                z.ln() - row[labels[i]]
            })
            .sum::<f64>()
            / 2.0;
        assert!((weighted - mean).abs() < 1e-6);
    }

    #[test]
    fn one_hot_alpha_selects_single_example() {
        let logits = Tensor::new(vec![2, 2], vec![2.0, -2.0, -3.0, 3.0]).unwrap();
        let labels = [0usize, 0];
        let onehot = AttentionBatchWeights {
            alpha: Tensor::from_vec(vec![0.0, 1.0]),
            domain: WeightDomain::WebImage,
        };
        let got = weighted_ce_loss(&logits, &labels, &onehot).unwrap();
        let row: Vec<f64> = vec![-3.0, 3.0];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        let ce1 = z.ln() - row[0];
        assert!((got - ce1).abs() < 1e-6);
    }

    #[test]
    fn hand_weighted_sum() {
        // CE values [0.2, 1.0] with weights [0.9, 0.1] -> 0.28
        // construct logits with exact CE: two classes, ce = ln(1 + e^(l1-l0))
        // pick gap so ce = 0.2: l1-l0 = ln(e^0.2 - 1)
        let gap0 = (0.2f64.exp() - 1.0).ln();
        let gap1 = (1.0f64.exp() - 1.0).ln();
        let logits = Tensor::new(
            vec![2, 2],
            vec![0.0, gap0 as f32, 0.0, gap1 as f32],
        )
        .unwrap();
        let labels = [0usize, 0];
        let alpha = AttentionBatchWeights {
            alpha: Tensor::from_vec(vec![0.9, 0.1]),
            domain: WeightDomain::WebImage,
        };
        let got = weighted_ce_loss(&logits, &labels, &alpha).unwrap();
        assert!((got - 0.28).abs() < 1e-5, "got {got}");
    }

    #[test]
    fn invalid_label_is_an_error() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let alpha = AttentionBatchWeights {
            alpha: Tensor::from_vec(vec![1.0]),
            domain: WeightDomain::WebImage,
        };
        assert!(weighted_ce_loss(&logits, &[5], &alpha).is_err());
    }

    fn toy_setup() -> (Encoder2dState, AttentionParams, [MultiLayerDiscriminatorState; 3], Tensor, Tensor, Tensor) {
        use crate::adversarial::DomainPair;
        let arch = ModelArch {
            input_size: 8,
            stage_channels: vec![4, 6],
            spatial_kernel: 3,
            temporal_kernel: 3,
            frames_per_chunk: 4,
            num_classes: 3,
        };
        let enc = Encoder2dState::new_seeded(arch.clone(), 42).unwrap();
        let att = AttentionParams::identity(arch.embedding_dim(), 2, 0.5);
        let dims = arch.tap_dims();
        let discs = [
            MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageTarget, &dims, 4, 1),
            MultiLayerDiscriminatorState::new_seeded(DomainPair::WebVideoTarget, &dims, 4, 2),
            MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageWebVideo, &dims, 4, 3),
        ];
        let mk = |seed: u64, n: usize| {
            let mut r = rng::stream(seed, "t.batch");
            Tensor::new(vec![n, 3, 8, 8], (0..n * 3 * 64).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
        };
        (enc, att, discs, mk(10, 4), mk(11, 4), mk(12, 4))
    }

    #[test]
    fn ablated_loss_is_plain_mean_ce() {
        let (enc, att, discs, imgs, frms, tgts) = toy_setup();
        let models = ImageModels {
            encoder: &enc,
            attention: &att,
            disc_image_target: &discs[0],
            disc_video_target: &discs[1],
            disc_image_video: &discs[2],
        };
        let batch = ImageBatch {
            web_images: &imgs,
            web_image_labels: &[0, 1, 2, 0],
            web_frames: &frms,
            web_frame_labels: &[1, 1, 0, 2],
            target_frames: &tgts,
        };
        let opts = StageLossOptions {
            attention: false,
            domain_adaptation: false,
            beta: 0.0,
            lambda: 1.0,
            for_training: false,
        };
        let loss = image_stage_loss(&models, &batch, &opts).unwrap();
        // components must be exactly the two mean CE terms
        let img_out = crate::encoders::encoder2d_forward(&enc, &imgs).unwrap();
        let uniform = AttentionBatchWeights {
            alpha: Tensor::from_vec(vec![0.25; 4]),
            domain: WeightDomain::WebImage,
        };
        let want_ce = weighted_ce_loss(&img_out.logits, &[0, 1, 2, 0], &uniform).unwrap();
        assert!((loss.components.ce_image - want_ce).abs() < 1e-5);
        assert_eq!(loss.components.domain_image_target, 0.0);
        assert!((loss.components.total - (loss.components.ce_image + loss.components.ce_frame)).abs() < 1e-12);
        // uniform weights echoed back
        assert!(loss.alpha_image.alpha.data().iter().all(|&a| (a - 0.25).abs() < 1e-7));
    }

    #[test]
    fn zeroed_discriminators_add_three_beta_ln2() {
        let (enc, att, mut discs, imgs, frms, tgts) = toy_setup();
        for d in &mut discs {
            d.zero();
        }
        let beta = 0.1;
        let models = ImageModels {
            encoder: &enc,
            attention: &att,
            disc_image_target: &discs[0],
            disc_video_target: &discs[1],
            disc_image_video: &discs[2],
        };
        let batch = ImageBatch {
            web_images: &imgs,
            web_image_labels: &[0, 1, 2, 0],
            web_frames: &frms,
            web_frame_labels: &[1, 1, 0, 2],
            target_frames: &tgts,
        };
        let with_da = image_stage_loss(&models, &batch, &StageLossOptions {
            attention: true,
            domain_adaptation: true,
            beta,
            lambda: 1.0,
            for_training: false,
        })
        .unwrap();
        let without = image_stage_loss(&models, &batch, &StageLossOptions {
            attention: true,
            domain_adaptation: false,
            beta,
            lambda: 1.0,
            for_training: false,
        })
        .unwrap();
        let want = without.components.total + 3.0 * beta * std::f64::consts::LN_2;
        assert!(
            (with_da.components.total - want).abs() < 1e-4,
            "{} vs {}",
            with_da.components.total,
            want
        );
    }

    #[test]
    fn missing_target_batch_is_an_error() {
        let (enc, att, discs, imgs, frms, _) = toy_setup();
        let models = ImageModels {
            encoder: &enc,
            attention: &att,
            disc_image_target: &discs[0],
            disc_video_target: &discs[1],
            disc_image_video: &discs[2],
        };
        // a target batch smaller than top-T violates the attention precondition
        let tiny = Tensor::zeros(vec![1, 3, 8, 8]);
        let batch = ImageBatch {
            web_images: &imgs,
            web_image_labels: &[0, 1, 2, 0],
            web_frames: &frms,
            web_frame_labels: &[1, 1, 0, 2],
            target_frames: &tiny,
        };
        let opts = StageLossOptions {
            attention: true,
            domain_adaptation: true,
            beta: 0.1,
            lambda: 1.0,
            for_training: false,
        };
        assert!(image_stage_loss(&models, &batch, &opts).is_err());
    }

    #[test]
    fn image_stage_w_gradient_is_nonzero_and_passes_gradcheck() {
        use crate::numerics::gradcheck::finite_difference_gradcheck;
        let (enc, att, discs, imgs, frms, tgts) = toy_setup();
        let labels_i = [0usize, 1, 2, 0];
        let labels_f = [1usize, 1, 0, 2];
        let opts = StageLossOptions {
            attention: true,
            domain_adaptation: true,
            beta: 0.1,
            lambda: 1.0,
            for_training: true,
        };
        let report = finite_difference_gradcheck(
            "image_stage.attention_w",
            &att.w,
            |wv| {
                let mut att2 = att.clone();
                att2.w = Tensor::from_f64(vec![6, 6], wv).unwrap().with_grad();
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
                let loss = image_stage_loss(&models, &batch, &opts).unwrap();
                (loss.graph, loss.attention_w.unwrap(), loss.total)
            },
            1e-4,
            1e-3,
        )
        .unwrap();
        assert!(report.passed, "{report}");

        // and the gradient is not identically zero
        let models = ImageModels {
            encoder: &enc,
            attention: &att,
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
        let mut loss = image_stage_loss(&models, &batch, &opts).unwrap();
        let w = loss.attention_w.unwrap();
        let total = loss.total;
        loss.graph.backward(total);
        assert!(loss.graph.grad(w).iter().any(|&v| v.abs() > 1e-9));
    }
}
