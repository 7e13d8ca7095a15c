//! Gradient reversal, the multi-layer domain discriminator, and the
//! pairwise/total domain losses.
//!
//! Each domain pair (web image vs target, web video vs target, web image vs
//! web video) gets its own discriminator. A discriminator consumes encoder
//! taps from several depths through the recursion
//! `d_l = D_l(relu(d_{l-1} (+) E_l(x)))` with `d_0` the empty vector, ending
//! in a scalar sigmoid. Encoder-side adversarial pressure comes from the
//! gradient reversal layer on the taps, so discriminator training and
//! encoder fooling happen in one backward pass.

use rand::Rng;

use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::rng;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

/// Identity in the forward pass; multiplies the upstream gradient by
/// `-lambda` in the backward pass.
pub fn grl_apply(g: &mut Graph, x: NodeId, lambda: f64) -> NodeId {
    g.grl(x, lambda)
}

/// The three adversarial pairs of the image stage. The video stage uses only
/// [`DomainPair::WebVideoTarget`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainPair {
    /// Web images vs target frames (target is the "first" domain).
    WebImageTarget,
    /// Web video frames vs target frames (target is the "first" domain).
    WebVideoTarget,
    /// Web images vs web video frames (web images are the "first" domain).
    WebImageWebVideo,
}

impl DomainPair {
    pub fn short_name(&self) -> &'static str {
        match self {
            DomainPair::WebImageTarget => "I",
            DomainPair::WebVideoTarget => "V",
            DomainPair::WebImageWebVideo => "B",
        }
    }
}

/// One affine map of the discriminator recursion.
#[derive(Debug, Clone)]
pub struct DiscLayer {
    /// [out, in]
    pub weight: Tensor,
    /// [out]
    pub bias: Tensor,
}

/// Multi-layer domain discriminator.
///
/// Layer `l` consumes `relu(d_{l-1} (+) tap_l)`; the last layer maps to a
/// single logit which passes through a sigmoid. The number of layers always
/// equals the number of encoder taps.
#[derive(Debug, Clone)]
pub struct MultiLayerDiscriminatorState {
    pub pair: DomainPair,
    pub layers: Vec<DiscLayer>,
    /// Width of each hidden output; the final entry is implicitly 1.
    pub hidden_dims: Vec<usize>,
}

impl MultiLayerDiscriminatorState {
    /// Builds a discriminator for the given tap dimensions. Hidden width is
    /// per layer; the final layer outputs a single logit.
    pub fn new_seeded(pair: DomainPair, tap_dims: &[usize], hidden: usize, seed: u64) -> Self {
        assert!(!tap_dims.is_empty(), "at least one encoder tap required");
        let mut r = rng::stream(seed, &format!("disc.{}.init", pair.short_name()));
        let mut layers = Vec::new();
        let mut hidden_dims = Vec::new();
        let mut prev_out = 0usize; // d_0 is the empty vector
        for (l, &tap) in tap_dims.iter().enumerate() {
            let din = prev_out + tap;
            let dout = if l + 1 == tap_dims.len() { 1 } else { hidden };
            let limit = (1.0 / din as f64).sqrt() as f32;
            let weight = Tensor::new(
                vec![dout, din],
                (0..dout * din).map(|_| r.gen_range(-limit..limit)).collect(),
            )
            .expect("consistent dims")
            .with_grad();
            let bias = Tensor::zeros(vec![dout]).with_grad();
            layers.push(DiscLayer { weight, bias });
            hidden_dims.push(dout);
            prev_out = dout;
        }
        MultiLayerDiscriminatorState {
            pair,
            layers,
            hidden_dims,
        }
    }

    /// Zeroes every weight and bias (chance output 0.5 everywhere).
    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.data_mut().fill(0.0);
            l.bias.data_mut().fill(0.0);
        }
    }

    pub fn tap_dims(&self) -> Vec<usize> {
        let mut prev = 0usize;
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(layer.weight.shape()[1] - prev);
            prev = self.hidden_dims[l];
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let tag = self.pair.short_name();
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("disc.{tag}.layer{}.weight", l + 1), &layer.weight));
            out.push((format!("disc.{tag}.layer{}.bias", l + 1), &layer.bias));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let tag = self.pair.short_name();
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("disc.{tag}.layer{}.weight", l + 1), &mut layer.weight));
            out.push((format!("disc.{tag}.layer{}.bias", l + 1), &mut layer.bias));
        }
        out
    }
}

/// Discriminator parameters bound into a tape.
pub struct BoundDisc {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

impl MultiLayerDiscriminatorState {
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundDisc {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in &self.layers {
            weights.push(g.leaf_tensor(&l.weight, trainable));
            biases.push(g.leaf_tensor(&l.bias, trainable));
        }
        BoundDisc { weights, biases }
    }
}

/// Runs the discriminator recursion on per-layer taps (each [batch, dim]),
/// returning a [batch] probability node in (0, 1).
pub fn discriminator_forward_graph(g: &mut Graph, bound: &BoundDisc, taps: &[NodeId]) -> NodeId {
    assert_eq!(taps.len(), bound.weights.len(), "tap count mismatch");
    let mut prev: Option<NodeId> = None;
    let mut out = taps[0];
    for (l, &tap) in taps.iter().enumerate() {
        let cat = match prev {
            None => tap,
            Some(p) => g.concat_cols(p, tap),
        };
        let act = g.relu(cat);
        out = g.linear(act, bound.weights[l], bound.biases[l]);
        prev = Some(out);
    }
    let probs = g.sigmoid(out);
    // flatten [batch, 1] -> [batch]
    flatten_column(g, probs)
}

fn flatten_column(g: &mut Graph, x: NodeId) -> NodeId {
    let s = g.shape(x).to_vec();
    assert_eq!(s.len(), 2, "expected a column");
    assert_eq!(s[1], 1, "expected a single column");
    // reuse the value as a rank-1 leaf-like view via sum over the unit axis:
    // topt with t=1 over each row picks the single entry and keeps gradients.
    g.topt_rows(x, 1)
}

/// Tensor-level discriminator output for a single example's taps.
pub fn discriminator_forward(state: &MultiLayerDiscriminatorState, taps: &[Tensor]) -> Result<f64> {
    if taps.len() != state.layers.len() {
        return Err(CoreError::InvalidArgument(format!(
            "discriminator expects {} taps, got {}",
            state.layers.len(),
            taps.len()
        )));
    }
    let dims = state.tap_dims();
    for (i, (t, &want)) in taps.iter().zip(&dims).enumerate() {
        if t.rank() != 1 || t.numel() != want {
            return Err(CoreError::shape(
                "discriminator_forward",
                format!("tap {i} of dim {want}"),
                format!("{:?}", t.shape()),
            ));
        }
    }
    let mut g = Graph::new();
    let bound = state.bind(&mut g, false);
    let tap_nodes: Vec<NodeId> = taps
        .iter()
        .map(|t| g.leaf(vec![1, t.numel()], t.to_f64(), false))
        .collect();
    let p = discriminator_forward_graph(&mut g, &bound, &tap_nodes);
    Ok(g.value(p)[0].clamp(f64::MIN_POSITIVE, 1.0 - 1e-16))
}

/// Mean binary cross-entropy over one domain pair: target 1 for the first
/// domain's probabilities, 0 for the second's, averaged over the union of
/// both batches so a chance discriminator scores exactly ln 2. Probabilities
/// are clamped to [1e-7, 1 - 1e-7].
pub fn pairwise_domain_loss(d_first: &[f64], d_second: &[f64]) -> Result<f64> {
    if d_first.is_empty() || d_second.is_empty() {
        return Err(CoreError::InvalidArgument(
            "pairwise_domain_loss: both batches must be non-empty".into(),
        ));
    }
    let clamp = |p: f64| p.clamp(1e-7, 1.0 - 1e-7);
    let a: f64 = d_first.iter().map(|&p| -clamp(p).ln()).sum();
    let b: f64 = d_second.iter().map(|&p| -(1.0 - clamp(p)).ln()).sum();
    Ok((a + b) / (d_first.len() + d_second.len()) as f64)
}

/// Tape version of [`pairwise_domain_loss`] used inside the stage losses.
pub fn pairwise_domain_loss_graph(g: &mut Graph, d_first: NodeId, d_second: NodeId) -> NodeId {
    let n1 = g.value(d_first).len() as f64;
    let n2 = g.value(d_second).len() as f64;
    let a = g.bce_mean(d_first, true);
    let b = g.bce_mean(d_second, false);
    let aw = g.scale(a, n1 / (n1 + n2));
    let bw = g.scale(b, n2 / (n1 + n2));
    g.add(aw, bw)
}

/// Sum of the three image-stage pairwise losses.
pub fn total_domain_loss(l_i: f64, l_v: f64, l_b: f64) -> f64 {
    l_i + l_v + l_b
}
