//! Reverse-mode autodiff tape.
//!
//! A `Graph` is a define-by-run tape: every op computes its value eagerly at
//! construction and records enough to run the backward pass. Values and
//! gradients are f64 while the tape is live; parameters and data come in as
//! f32 tensors and results leave as f32. Construction panics on shape
//! mismatches — the public module APIs validate their inputs before building
//! a tape.
//!
//! The op set is exactly what the encoders, discriminators, attention, and
//! stage losses need; this is not a general autodiff surface.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// y = a · bᵀ for a [n,k], b [m,k]
    MatmulNt {
        a: NodeId,
        b: NodeId,
        n: usize,
        k: usize,
        m: usize,
    },
    /// y = x · wᵀ + b for x [n,din], w [dout,din], b [dout]
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        n: usize,
        din: usize,
        dout: usize,
    },
    /// Same-padding 2D convolution, NCHW, odd square kernel.
    Conv2d {
        x: NodeId,
        k: NodeId,
        b: NodeId,
        batch: usize,
        ci: usize,
        co: usize,
        h: usize,
        w: usize,
        ksize: usize,
    },
    /// 2x2 average pooling with stride 2 (h, w even).
    AvgPool2 {
        x: NodeId,
        batch: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    /// 2x2 max pooling with stride 2 (h, w even); ties route the gradient to
    /// the first maximal position in scan order.
    MaxPool2 {
        x: NodeId,
        picked: Vec<u32>,
    },
    /// [rows, c, spatial] -> [rows, c] mean over the spatial axis.
    GlobalAvgPool {
        x: NodeId,
        rows: usize,
        c: usize,
        spatial: usize,
    },
    /// [batch*frames, c] -> [batch, c] mean over frames.
    MeanFrames {
        x: NodeId,
        batch: usize,
        frames: usize,
        c: usize,
    },
    /// Same-padding 1D convolution across the frame axis of a frame-major
    /// video activation [batch*frames, ci, hw], mixing channels.
    TemporalConv {
        x: NodeId,
        k: NodeId,
        b: NodeId,
        batch: usize,
        frames: usize,
        ci: usize,
        co: usize,
        hw: usize,
        kt: usize,
    },
    /// Rows scaled to unit L2 norm (with a small floor for empty rows).
    RowNormalize { x: NodeId, n: usize, d: usize },
    /// Identity forward; backward multiplies the upstream gradient by -lambda.
    Grl { x: NodeId, lambda: f64 },
    Detach,
    ConcatCols {
        a: NodeId,
        b: NodeId,
        n: usize,
        da: usize,
        db: usize,
    },
    /// Per-row sum of the t largest entries; ties broken by lower index.
    TopTRows { x: NodeId, picked: Vec<u32> },
    /// Temperature softmax over a vector, with max-subtraction.
    SoftmaxTemp { x: NodeId, tau: f64 },
    /// loss = sum_i alpha_i * ce_i with ce_i = -log softmax(logits_i)[label_i]
    WeightedCe {
        logits: NodeId,
        alpha: NodeId,
        labels: Vec<u32>,
        n: usize,
        l: usize,
        probs: Vec<f64>,
        ce: Vec<f64>,
    },
    /// -mean(log p) if target_one else -mean(log(1 - p)), p clamped to
    /// [1e-7, 1 - 1e-7].
    BceMean { p: NodeId, target_one: bool },
    SumAll(NodeId),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

const BCE_EPS: f64 = 1e-7;

/// The autodiff tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: Vec::new(),
            op,
            needs_grad,
        });
        NodeId((self.nodes.len() - 1) as u32)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.idx()].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.idx()].shape
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        assert_eq!(self.nodes[id.idx()].value.len(), 1, "not a scalar node");
        self.nodes[id.idx()].value[0]
    }

    /// Gradient of the last `backward` target w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.idx()].grad
    }

    /// Extracts a node's value as an f32 tensor.
    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.idx()];
        Tensor::from_f64(n.shape.clone(), &n.value).expect("node shape is consistent")
    }

    // ---- leaves -----------------------------------------------------------

    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> NodeId {
        self.push(shape, value, Op::Leaf, needs_grad)
    }

    pub fn leaf_tensor(&mut self, t: &Tensor, needs_grad: bool) -> NodeId {
        self.leaf(t.shape().to_vec(), t.to_f64(), needs_grad)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(vec![1], vec![v], false)
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, v, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, v, Op::Scale(a, c), ng)
    }

    /// y = c * x + d elementwise with scalar constants.
    pub fn affine(&mut self, a: NodeId, c: f64, d: f64) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|x| c * x + d).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, v, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.value(a).iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, v, Op::Sigmoid(a), ng)
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.len(), 2, "matmul_nt: a must be rank 2");
        assert_eq!(sb.len(), 2, "matmul_nt: b must be rank 2");
        assert_eq!(sa[1], sb[1], "matmul_nt: inner dims differ");
        let (n, k, m) = (sa[0], sa[1], sb[0]);
        let av = self.value(a);
        let bv = self.value(b);
        let mut v = vec![0.0; n * m];
        for i in 0..n {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &bv[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for t in 0..k {
                    acc += arow[t] * brow[t];
                }
                v[i * m + j] = acc;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![n, m], v, Op::MatmulNt { a, b, n, k, m }, ng)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        assert_eq!(sx.len(), 2, "linear: x must be rank 2");
        assert_eq!(sw.len(), 2, "linear: w must be rank 2");
        assert_eq!(sx[1], sw[1], "linear: input dim mismatch");
        assert_eq!(sb, [sw[0]], "linear: bias dim mismatch");
        let (n, din, dout) = (sx[0], sx[1], sw[0]);
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut v = vec![0.0; n * dout];
        for i in 0..n {
            let xrow = &xv[i * din..(i + 1) * din];
            let orow = &mut v[i * dout..(i + 1) * dout];
            for o in 0..dout {
                let wrow = &wv[o * din..(o + 1) * din];
                let mut acc = bv[o];
                for t in 0..din {
                    acc += xrow[t] * wrow[t];
                }
                orow[o] = acc;
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(vec![n, dout], v, Op::Linear { x, w, b, n, din, dout }, ng)
    }

    // ---- convolution ------------------------------------------------------

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId) -> NodeId {
        let (sx, sk, sb) = (self.shape(x), self.shape(k), self.shape(b));
        assert_eq!(sx.len(), 4, "conv2d: x must be [batch, ci, h, w]");
        assert_eq!(sk.len(), 4, "conv2d: k must be [co, ci, ks, ks]");
        assert_eq!(sk[1], sx[1], "conv2d: channel mismatch");
        assert_eq!(sk[2], sk[3], "conv2d: kernel must be square");
        assert_eq!(sk[2] % 2, 1, "conv2d: kernel must be odd");
        assert_eq!(sb, [sk[0]], "conv2d: bias dim mismatch");
        let (batch, ci, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, ksize) = (sk[0], sk[2]);
        let value = conv2d_forward(self.value(x), self.value(k), self.value(b), batch, ci, co, h, w, ksize);
        let ng = self.ng(x) || self.ng(k) || self.ng(b);
        self.push(
            vec![batch, co, h, w],
            value,
            Op::Conv2d { x, k, b, batch, ci, co, h, w, ksize },
            ng,
        )
    }

    pub fn avgpool2(&mut self, x: NodeId) -> NodeId {
        let sx = self.shape(x);
        assert_eq!(sx.len(), 4, "avgpool2: x must be rank 4");
        let (batch, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "avgpool2: h and w must be even");
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut v = vec![0.0; batch * c * oh * ow];
        for bc in 0..batch * c {
            let ib = bc * h * w;
            let ob = bc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let p = ib + (2 * oy) * w + 2 * ox;
                    v[ob + oy * ow + ox] = 0.25 * (xv[p] + xv[p + 1] + xv[p + w] + xv[p + w + 1]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(vec![batch, c, oh, ow], v, Op::AvgPool2 { x, batch, c, h, w }, ng)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> NodeId {
        let sx = self.shape(x);
        assert_eq!(sx.len(), 4, "maxpool2: x must be rank 4");
        let (batch, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2: h and w must be even");
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut v = vec![0.0; batch * c * oh * ow];
        let mut picked = vec![0u32; batch * c * oh * ow];
        for bc in 0..batch * c {
            let ib = bc * h * w;
            let ob = bc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let p = ib + (2 * oy) * w + 2 * ox;
                    let candidates = [p, p + 1, p + w, p + w + 1];
                    let mut best = candidates[0];
                    for &cand in &candidates[1..] {
                        if xv[cand] > xv[best] {
                            best = cand;
                        }
                    }
                    v[ob + oy * ow + ox] = xv[best];
                    picked[ob + oy * ow + ox] = best as u32;
                }
            }
        }
        let ng = self.ng(x);
        self.push(vec![batch, c, oh, ow], v, Op::MaxPool2 { x, picked }, ng)
    }

    /// Mean over all trailing spatial axes: [rows, c, ...] -> [rows, c].
    pub fn global_avgpool(&mut self, x: NodeId) -> NodeId {
        let sx = self.shape(x);
        assert!(sx.len() >= 3, "global_avgpool: x must be at least rank 3");
        let rows = sx[0];
        let c = sx[1];
        let spatial: usize = sx[2..].iter().product();
        let xv = self.value(x);
        let mut v = vec![0.0; rows * c];
        for rc in 0..rows * c {
            let base = rc * spatial;
            let mut acc = 0.0;
            for s in 0..spatial {
                acc += xv[base + s];
            }
            v[rc] = acc / spatial as f64;
        }
        let ng = self.ng(x);
        self.push(vec![rows, c], v, Op::GlobalAvgPool { x, rows, c, spatial }, ng)
    }

    /// [batch*frames, c] -> [batch, c] mean over the frame axis.
    pub fn mean_frames(&mut self, x: NodeId, frames: usize) -> NodeId {
        let sx = self.shape(x);
        assert_eq!(sx.len(), 2, "mean_frames: x must be rank 2");
        assert_eq!(sx[0] % frames, 0, "mean_frames: rows not divisible by frames");
        let batch = sx[0] / frames;
        let c = sx[1];
        let xv = self.value(x);
        let mut v = vec![0.0; batch * c];
        for bi in 0..batch {
            for fi in 0..frames {
                let base = (bi * frames + fi) * c;
                for ch in 0..c {
                    v[bi * c + ch] += xv[base + ch];
                }
            }
        }
        for e in v.iter_mut() {
            *e /= frames as f64;
        }
        let ng = self.ng(x);
        self.push(vec![batch, c], v, Op::MeanFrames { x, batch, frames, c }, ng)
    }

    /// Same-padding temporal convolution over frame-major video activations.
    ///
    /// `x` is [batch*frames, ci, h, w] with the frame index varying fastest
    /// within a batch item; the kernel is [co, ci, kt] with kt odd and
    /// kt <= frames.
    pub fn temporal_conv(&mut self, x: NodeId, k: NodeId, b: NodeId, frames: usize) -> NodeId {
        let (sx, sk, sb) = (self.shape(x), self.shape(k), self.shape(b));
        assert_eq!(sx.len(), 4, "temporal_conv: x must be [batch*frames, ci, h, w]");
        assert_eq!(sk.len(), 3, "temporal_conv: k must be [co, ci, kt]");
        assert_eq!(sx[0] % frames, 0, "temporal_conv: rows not divisible by frames");
        assert_eq!(sk[1], sx[1], "temporal_conv: channel mismatch");
        assert_eq!(sb, [sk[0]], "temporal_conv: bias dim mismatch");
        let kt = sk[2];
        assert!(kt % 2 == 1, "temporal_conv: kt must be odd");
        assert!(kt <= frames, "temporal_conv: kernel longer than chunk");
        let batch = sx[0] / frames;
        let (ci, co) = (sx[1], sk[0]);
        let hw = sx[2] * sx[3];
        let value = temporal_forward(self.value(x), self.value(k), self.value(b), batch, frames, ci, co, hw, kt);
        let ng = self.ng(x) || self.ng(k) || self.ng(b);
        let shape = vec![sx[0], co, sx[2], sx[3]];
        self.push(
            shape,
            value,
            Op::TemporalConv { x, k, b, batch, frames, ci, co, hw, kt },
            ng,
        )
    }

    // ---- adaptation and attention ops --------------------------------------

    /// Scales each row of a [n, d] node to unit L2 norm.
    pub fn row_normalize(&mut self, x: NodeId) -> NodeId {
        let sx = self.shape(x);
        assert_eq!(sx.len(), 2, "row_normalize: x must be rank 2");
        let (n, d) = (sx[0], sx[1]);
        let xv = self.value(x);
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            for (o, &a) in v[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = a / norm;
            }
        }
        let ng = self.ng(x);
        self.push(vec![n, d], v, Op::RowNormalize { x, n, d }, ng)
    }

    pub fn grl(&mut self, x: NodeId, lambda: f64) -> NodeId {
        assert!(lambda >= 0.0, "grl: lambda must be nonnegative");
        let v = self.value(x).to_vec();
        let ng = self.ng(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, v, Op::Grl { x, lambda }, ng)
    }

    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).to_vec();
        let shape = self.shape(x).to_vec();
        self.push(shape, v, Op::Detach, false)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.len(), 2, "concat_cols: a must be rank 2");
        assert_eq!(sb.len(), 2, "concat_cols: b must be rank 2");
        assert_eq!(sa[0], sb[0], "concat_cols: row count mismatch");
        let (n, da, db) = (sa[0], sa[1], sb[1]);
        let av = self.value(a);
        let bv = self.value(b);
        let mut v = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            v.extend_from_slice(&av[i * da..(i + 1) * da]);
            v.extend_from_slice(&bv[i * db..(i + 1) * db]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![n, da + db], v, Op::ConcatCols { a, b, n, da, db }, ng)
    }

    /// Per-row sum of the t largest entries, ties broken by lower index.
    pub fn topt_rows(&mut self, x: NodeId, t: usize) -> NodeId {
        let sx = self.shape(x);
        assert_eq!(sx.len(), 2, "topt_rows: x must be rank 2");
        let (n, m) = (sx[0], sx[1]);
        assert!(t >= 1 && t <= m, "topt_rows: t out of range");
        let xv = self.value(x);
        let mut picked = Vec::with_capacity(n * t);
        let mut v = vec![0.0; n];
        let mut order: Vec<u32> = Vec::with_capacity(m);
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            order.clear();
            order.extend(0..m as u32);
            // descending by value, ascending by index on ties
            order.sort_by(|&p, &q| {
                row[q as usize]
                    .partial_cmp(&row[p as usize])
                    .expect("scores are finite")
                    .then(p.cmp(&q))
            });
            let mut acc = 0.0;
            for &j in order.iter().take(t) {
                acc += row[j as usize];
                picked.push(i as u32 * m as u32 + j);
            }
            v[i] = acc;
        }
        let ng = self.ng(x);
        self.push(vec![n], v, Op::TopTRows { x, picked }, ng)
    }

    /// Temperature softmax over a rank-1 node.
    pub fn softmax_temp(&mut self, x: NodeId, tau: f64) -> NodeId {
        assert!(tau > 0.0, "softmax_temp: tau must be positive");
        let sx = self.shape(x);
        assert_eq!(sx.len(), 1, "softmax_temp: x must be rank 1");
        let xv = self.value(x);
        let maxv = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut v: Vec<f64> = xv.iter().map(|s| ((s - maxv) / tau).exp()).collect();
        let z: f64 = v.iter().sum();
        for e in v.iter_mut() {
            *e /= z;
        }
        let ng = self.ng(x);
        let shape = sx.to_vec();
        self.push(shape, v, Op::SoftmaxTemp { x, tau }, ng)
    }

    /// Attention-weighted cross-entropy: sum_i alpha_i * ce_i.
    pub fn weighted_ce(&mut self, logits: NodeId, labels: &[usize], alpha: NodeId) -> NodeId {
        let (sl, sa) = (self.shape(logits), self.shape(alpha));
        assert_eq!(sl.len(), 2, "weighted_ce: logits must be [n, l]");
        let (n, l) = (sl[0], sl[1]);
        assert_eq!(sa, [n], "weighted_ce: alpha must be [n]");
        assert_eq!(labels.len(), n, "weighted_ce: labels length mismatch");
        assert!(labels.iter().all(|&y| y < l), "weighted_ce: label out of range");
        let lv = self.value(logits);
        let av = self.value(alpha);
        let mut probs = vec![0.0; n * l];
        let mut ce = vec![0.0; n];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &lv[i * l..(i + 1) * l];
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..l {
                let e = (row[j] - maxv).exp();
                probs[i * l + j] = e;
                z += e;
            }
            for j in 0..l {
                probs[i * l + j] /= z;
            }
            ce[i] = z.ln() + maxv - row[labels[i]];
            loss += av[i] * ce[i];
        }
        let ng = self.ng(logits) || self.ng(alpha);
        let labels: Vec<u32> = labels.iter().map(|&y| y as u32).collect();
        self.push(
            vec![1],
            vec![loss],
            Op::WeightedCe { logits, alpha, labels, n, l, probs, ce },
            ng,
        )
    }

    /// Binary cross-entropy against a constant domain label, mean over the batch.
    pub fn bce_mean(&mut self, p: NodeId, target_one: bool) -> NodeId {
        let n = self.value(p).len();
        assert!(n > 0, "bce_mean: empty probability batch");
        let pv = self.value(p);
        let mut acc = 0.0;
        for &pi in pv {
            let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            acc -= if target_one { pc.ln() } else { (1.0 - pc).ln() };
        }
        let ng = self.ng(p);
        self.push(vec![1], vec![acc / n as f64], Op::BceMean { p, target_one }, ng)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![s], Op::SumAll(x), ng)
    }

    // ---- backward ---------------------------------------------------------

    /// Runs the backward pass from a scalar node, filling `grad` buffers for
    /// every node that needs a gradient.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss.idx()].value.len(), 1, "backward target must be scalar");
        for node in self.nodes.iter_mut() {
            if node.needs_grad {
                node.grad = vec![0.0; node.value.len()];
            } else {
                node.grad.clear();
            }
        }
        if !self.nodes[loss.idx()].needs_grad {
            return;
        }
        self.nodes[loss.idx()].grad[0] = 1.0;
        for i in (0..=loss.idx()).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_empty() {
                continue;
            }
            self.backward_node(i);
        }
    }

    fn backward_node(&mut self, i: usize) {
        // Take the node's grad out to satisfy the borrow checker; ops below
        // only touch parent nodes, whose indices are strictly smaller.
        let gout = std::mem::take(&mut self.nodes[i].grad);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, |ga| {
                    for (g, &u) in ga.iter_mut().zip(&gout) {
                        *g += u;
                    }
                });
                self.accum(b, |gb| {
                    for (g, &u) in gb.iter_mut().zip(&gout) {
                        *g += u;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a.idx()].value.clone();
                let bv = self.nodes[b.idx()].value.clone();
                self.accum(a, |ga| {
                    for ((g, &u), &y) in ga.iter_mut().zip(&gout).zip(&bv) {
                        *g += u * y;
                    }
                });
                self.accum(b, |gb| {
                    for ((g, &u), &x) in gb.iter_mut().zip(&gout).zip(&av) {
                        *g += u * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                self.accum(a, |ga| {
                    for (g, &u) in ga.iter_mut().zip(&gout) {
                        *g += u * c;
                    }
                });
            }
            Op::Relu(a) => {
                let a = *a;
                let wasv = self.nodes[i].value.clone();
                self.accum(a, |ga| {
                    for ((g, &u), &y) in ga.iter_mut().zip(&gout).zip(&wasv) {
                        if y > 0.0 {
                            *g += u;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let yv = self.nodes[i].value.clone();
                self.accum(a, |ga| {
                    for ((g, &u), &y) in ga.iter_mut().zip(&gout).zip(&yv) {
                        *g += u * y * (1.0 - y);
                    }
                });
            }
            Op::MatmulNt { a, b, n, k, m } => {
                let (a, b, n, k, m) = (*a, *b, *n, *k, *m);
                let av = self.nodes[a.idx()].value.clone();
                let bv = self.nodes[b.idx()].value.clone();
                // dA[i,t] += sum_j gout[i,j] * b[j,t]
                self.accum(a, |ga| {
                    for i2 in 0..n {
                        for j in 0..m {
                            let u = gout[i2 * m + j];
                            if u == 0.0 {
                                continue;
                            }
                            let brow = &bv[j * k..(j + 1) * k];
                            let garow = &mut ga[i2 * k..(i2 + 1) * k];
                            for t in 0..k {
                                garow[t] += u * brow[t];
                            }
                        }
                    }
                });
                // dB[j,t] += sum_i gout[i,j] * a[i,t]
                self.accum(b, |gb| {
                    for i2 in 0..n {
                        let arow = &av[i2 * k..(i2 + 1) * k];
                        for j in 0..m {
                            let u = gout[i2 * m + j];
                            if u == 0.0 {
                                continue;
                            }
                            let gbrow = &mut gb[j * k..(j + 1) * k];
                            for t in 0..k {
                                gbrow[t] += u * arow[t];
                            }
                        }
                    }
                });
            }
            Op::Linear { x, w, b, n, din, dout } => {
                let (x, w, b, n, din, dout) = (*x, *w, *b, *n, *din, *dout);
                let xv = self.nodes[x.idx()].value.clone();
                let wv = self.nodes[w.idx()].value.clone();
                self.accum(x, |gx| {
                    for i2 in 0..n {
                        let grow = &gout[i2 * dout..(i2 + 1) * dout];
                        let gxrow = &mut gx[i2 * din..(i2 + 1) * din];
                        for o in 0..dout {
                            let u = grow[o];
                            if u == 0.0 {
                                continue;
                            }
                            let wrow = &wv[o * din..(o + 1) * din];
                            for t in 0..din {
                                gxrow[t] += u * wrow[t];
                            }
                        }
                    }
                });
                self.accum(w, |gw| {
                    for i2 in 0..n {
                        let grow = &gout[i2 * dout..(i2 + 1) * dout];
                        let xrow = &xv[i2 * din..(i2 + 1) * din];
                        for o in 0..dout {
                            let u = grow[o];
                            if u == 0.0 {
                                continue;
                            }
                            let gwrow = &mut gw[o * din..(o + 1) * din];
                            for t in 0..din {
                                gwrow[t] += u * xrow[t];
                            }
                        }
                    }
                });
                self.accum(b, |gb| {
                    for i2 in 0..n {
                        let grow = &gout[i2 * dout..(i2 + 1) * dout];
                        for o in 0..dout {
                            gb[o] += grow[o];
                        }
                    }
                });
            }
            Op::Conv2d { x, k, b, batch, ci, co, h, w, ksize } => {
                let (x, k, b) = (*x, *k, *b);
                let (batch, ci, co, h, w, ksize) = (*batch, *ci, *co, *h, *w, *ksize);
                let xv = self.nodes[x.idx()].value.clone();
                let kv = self.nodes[k.idx()].value.clone();
                if self.nodes[x.idx()].needs_grad {
                    let gx = conv2d_backward_input(&gout, &kv, batch, ci, co, h, w, ksize);
                    self.accum(x, |g| {
                        for (a, &d) in g.iter_mut().zip(&gx) {
                            *a += d;
                        }
                    });
                }
                if self.nodes[k.idx()].needs_grad {
                    let gk = conv2d_backward_kernel(&gout, &xv, batch, ci, co, h, w, ksize);
                    self.accum(k, |g| {
                        for (a, &d) in g.iter_mut().zip(&gk) {
                            *a += d;
                        }
                    });
                }
                self.accum(b, |gb| {
                    let hw = h * w;
                    for bi in 0..batch {
                        for oc in 0..co {
                            let base = (bi * co + oc) * hw;
                            let mut acc = 0.0;
                            for s in 0..hw {
                                acc += gout[base + s];
                            }
                            gb[oc] += acc;
                        }
                    }
                });
            }
            Op::AvgPool2 { x, batch, c, h, w } => {
                let (x, batch, c, h, w) = (*x, *batch, *c, *h, *w);
                let (oh, ow) = (h / 2, w / 2);
                self.accum(x, |gx| {
                    for bc in 0..batch * c {
                        let ib = bc * h * w;
                        let ob = bc * oh * ow;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let u = 0.25 * gout[ob + oy * ow + ox];
                                let p = ib + (2 * oy) * w + 2 * ox;
                                gx[p] += u;
                                gx[p + 1] += u;
                                gx[p + w] += u;
                                gx[p + w + 1] += u;
                            }
                        }
                    }
                });
            }
            Op::MaxPool2 { x, picked } => {
                let x = *x;
                let picked = picked.clone();
                self.accum(x, |gx| {
                    for (o, &src) in picked.iter().enumerate() {
                        gx[src as usize] += gout[o];
                    }
                });
            }
            Op::GlobalAvgPool { x, rows, c, spatial } => {
                let (x, rows, c, spatial) = (*x, *rows, *c, *spatial);
                self.accum(x, |gx| {
                    for rc in 0..rows * c {
                        let u = gout[rc] / spatial as f64;
                        let base = rc * spatial;
                        for s in 0..spatial {
                            gx[base + s] += u;
                        }
                    }
                });
            }
            Op::MeanFrames { x, batch, frames, c } => {
                let (x, batch, frames, c) = (*x, *batch, *frames, *c);
                self.accum(x, |gx| {
                    for bi in 0..batch {
                        for fi in 0..frames {
                            let base = (bi * frames + fi) * c;
                            for ch in 0..c {
                                gx[base + ch] += gout[bi * c + ch] / frames as f64;
                            }
                        }
                    }
                });
            }
            Op::TemporalConv { x, k, b, batch, frames, ci, co, hw, kt } => {
                let (x, k, b) = (*x, *k, *b);
                let (batch, frames, ci, co, hw, kt) = (*batch, *frames, *ci, *co, *hw, *kt);
                let xv = self.nodes[x.idx()].value.clone();
                let kv = self.nodes[k.idx()].value.clone();
                let pad = kt / 2;
                if self.nodes[x.idx()].needs_grad {
                    let mut gx = vec![0.0; xv.len()];
                    for bi in 0..batch {
                        for fo in 0..frames {
                            for t in 0..kt {
                                let fin = fo as isize + t as isize - pad as isize;
                                if fin < 0 || fin >= frames as isize {
                                    continue;
                                }
                                let fin = fin as usize;
                                for oc in 0..co {
                                    let grow = &gout[((bi * frames + fo) * co + oc) * hw..][..hw];
                                    for ic in 0..ci {
                                        let kvv = kv[(oc * ci + ic) * kt + t];
                                        if kvv == 0.0 {
                                            continue;
                                        }
                                        let gxrow = &mut gx[((bi * frames + fin) * ci + ic) * hw..][..hw];
                                        for s in 0..hw {
                                            gxrow[s] += kvv * grow[s];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accum(x, |g| {
                        for (a, &d) in g.iter_mut().zip(&gx) {
                            *a += d;
                        }
                    });
                }
                if self.nodes[k.idx()].needs_grad {
                    let mut gk = vec![0.0; kv.len()];
                    for bi in 0..batch {
                        for fo in 0..frames {
                            for t in 0..kt {
                                let fin = fo as isize + t as isize - pad as isize;
                                if fin < 0 || fin >= frames as isize {
                                    continue;
                                }
                                let fin = fin as usize;
                                for oc in 0..co {
                                    let grow = &gout[((bi * frames + fo) * co + oc) * hw..][..hw];
                                    for ic in 0..ci {
                                        let xrow = &xv[((bi * frames + fin) * ci + ic) * hw..][..hw];
                                        let mut acc = 0.0;
                                        for s in 0..hw {
                                            acc += grow[s] * xrow[s];
                                        }
                                        gk[(oc * ci + ic) * kt + t] += acc;
                                    }
                                }
                            }
                        }
                    }
                    self.accum(k, |g| {
                        for (a, &d) in g.iter_mut().zip(&gk) {
                            *a += d;
                        }
                    });
                }
                self.accum(b, |gb| {
                    for bi in 0..batch * frames {
                        for oc in 0..co {
                            let base = (bi * co + oc) * hw;
                            let mut acc = 0.0;
                            for s in 0..hw {
                                acc += gout[base + s];
                            }
                            gb[oc] += acc;
                        }
                    }
                });
            }
            Op::RowNormalize { x, n, d } => {
                let (x, n, d) = (*x, *n, *d);
                let xv = self.nodes[x.idx()].value.clone();
                let yv = self.nodes[i].value.clone();
                self.accum(x, |gx| {
                    for r in 0..n {
                        let row = &xv[r * d..(r + 1) * d];
                        let y = &yv[r * d..(r + 1) * d];
                        let g = &gout[r * d..(r + 1) * d];
                        let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                        let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                        for t in 0..d {
                            gx[r * d + t] += (g[t] - dot * y[t]) / norm;
                        }
                    }
                });
            }
            Op::Grl { x, lambda } => {
                let (x, lambda) = (*x, *lambda);
                self.accum(x, |gx| {
                    for (g, &u) in gx.iter_mut().zip(&gout) {
                        *g -= lambda * u;
                    }
                });
            }
            Op::Detach => {}
            Op::ConcatCols { a, b, n, da, db } => {
                let (a, b, n, da, db) = (*a, *b, *n, *da, *db);
                self.accum(a, |ga| {
                    for i2 in 0..n {
                        for t in 0..da {
                            ga[i2 * da + t] += gout[i2 * (da + db) + t];
                        }
                    }
                });
                self.accum(b, |gb| {
                    for i2 in 0..n {
                        for t in 0..db {
                            gb[i2 * db + t] += gout[i2 * (da + db) + da + t];
                        }
                    }
                });
            }
            Op::TopTRows { x, picked, .. } => {
                let x = *x;
                let picked = picked.clone();
                let t = picked.len() / gout.len();
                self.accum(x, |gx| {
                    for (row, &u) in gout.iter().enumerate() {
                        for &flat in &picked[row * t..(row + 1) * t] {
                            gx[flat as usize] += u;
                        }
                    }
                });
            }
            Op::SoftmaxTemp { x, tau } => {
                let (x, tau) = (*x, *tau);
                let av = self.nodes[i].value.clone();
                let dot: f64 = gout.iter().zip(&av).map(|(g, a)| g * a).sum();
                self.accum(x, |gx| {
                    for ((g, &u), &a) in gx.iter_mut().zip(&gout).zip(&av) {
                        *g += a / tau * (u - dot);
                    }
                });
            }
            Op::WeightedCe { logits, alpha, labels, n, l, probs, ce } => {
                let (logits, alpha) = (*logits, *alpha);
                let (n, l) = (*n, *l);
                let labels = labels.clone();
                let probs = probs.clone();
                let ce = ce.clone();
                let av = self.nodes[alpha.idx()].value.clone();
                let u = gout[0];
                self.accum(logits, |gl| {
                    for i2 in 0..n {
                        let y = labels[i2] as usize;
                        let w = u * av[i2];
                        for j in 0..l {
                            let ind = if j == y { 1.0 } else { 0.0 };
                            gl[i2 * l + j] += w * (probs[i2 * l + j] - ind);
                        }
                    }
                });
                self.accum(alpha, |ga| {
                    for i2 in 0..n {
                        ga[i2] += u * ce[i2];
                    }
                });
            }
            Op::BceMean { p, target_one } => {
                let (p, target_one) = (*p, *target_one);
                let pv = self.nodes[p.idx()].value.clone();
                let n = pv.len() as f64;
                let u = gout[0];
                self.accum(p, |gp| {
                    for (g, &pi) in gp.iter_mut().zip(&pv) {
                        if (BCE_EPS..=1.0 - BCE_EPS).contains(&pi) {
                            if target_one {
                                *g += u * (-1.0 / (pi * n));
                            } else {
                                *g += u * (1.0 / ((1.0 - pi) * n));
                            }
                        }
                        // outside the clamp range the loss is flat
                    }
                });
            }
            Op::SumAll(x) => {
                let x = *x;
                let u = gout[0];
                self.accum(x, |gx| {
                    for g in gx.iter_mut() {
                        *g += u;
                    }
                });
            }
        }
        self.nodes[i].grad = gout;
    }

    fn accum(&mut self, parent: NodeId, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[parent.idx()];
        if node.needs_grad && !node.grad.is_empty() {
            f(&mut node.grad);
        }
    }
}

// ---- convolution kernels ----------------------------------------------------

fn pad_channels(src: &[f64], ci: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; ci * ph * pw];
    for c in 0..ci {
        for y in 0..h {
            let srow = c * h * w + y * w;
            let drow = c * ph * pw + (y + pad) * pw + pad;
            out[drow..drow + w].copy_from_slice(&src[srow..srow + w]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    xv: &[f64],
    kv: &[f64],
    bv: &[f64],
    batch: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    ksize: usize,
) -> Vec<f64> {
    let pad = ksize / 2;
    let pw = w + 2 * pad;
    let phw = (h + 2 * pad) * pw;
    let hw = h * w;
    let kk = ksize * ksize;
    let mut out = vec![0.0; batch * co * hw];
    for bi in 0..batch {
        let xpad = pad_channels(&xv[bi * ci * hw..(bi + 1) * ci * hw], ci, h, w, pad);
        let obatch = bi * co * hw;
        for oc in 0..co {
            let obase = obatch + oc * hw;
            out[obase..obase + hw].fill(bv[oc]);
            for ic in 0..ci {
                let kbase = (oc * ci + ic) * kk;
                let ibase = ic * phw;
                for oy in 0..h {
                    let orow = obase + oy * w;
                    for ky in 0..ksize {
                        let irow = ibase + (oy + ky) * pw;
                        for kx in 0..ksize {
                            let kvv = kv[kbase + ky * ksize + kx];
                            if kvv == 0.0 {
                                continue;
                            }
                            let xrow = &xpad[irow + kx..irow + kx + w];
                            let orow = &mut out[orow..orow + w];
                            for s in 0..w {
                                orow[s] += kvv * xrow[s];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input(
    gout: &[f64],
    kv: &[f64],
    batch: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    ksize: usize,
) -> Vec<f64> {
    let pad = ksize / 2;
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let phw = ph * pw;
    let hw = h * w;
    let kk = ksize * ksize;
    let mut gx = vec![0.0; batch * ci * hw];
    let mut gpad = vec![0.0; ci * phw];
    for bi in 0..batch {
        gpad.fill(0.0);
        for oc in 0..co {
            let gbase = (bi * co + oc) * hw;
            for ic in 0..ci {
                let kbase = (oc * ci + ic) * kk;
                let ibase = ic * phw;
                for oy in 0..h {
                    let grow = &gout[gbase + oy * w..gbase + (oy + 1) * w];
                    for ky in 0..ksize {
                        let prow = ibase + (oy + ky) * pw;
                        for kx in 0..ksize {
                            let kvv = kv[kbase + ky * ksize + kx];
                            if kvv == 0.0 {
                                continue;
                            }
                            let dst = &mut gpad[prow + kx..prow + kx + w];
                            for s in 0..w {
                                dst[s] += kvv * grow[s];
                            }
                        }
                    }
                }
            }
        }
        // crop the padded gradient back to h x w
        for ic in 0..ci {
            for y in 0..h {
                let srow = ic * phw + (y + pad) * pw + pad;
                let drow = (bi * ci + ic) * hw + y * w;
                let (src, dst) = (&gpad[srow..srow + w], &mut gx[drow..drow + w]);
                dst.copy_from_slice(src);
            }
        }
    }
    gx
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_kernel(
    gout: &[f64],
    xv: &[f64],
    batch: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    ksize: usize,
) -> Vec<f64> {
    let pad = ksize / 2;
    let pw = w + 2 * pad;
    let phw = (h + 2 * pad) * pw;
    let hw = h * w;
    let kk = ksize * ksize;
    let mut gk = vec![0.0; co * ci * kk];
    for bi in 0..batch {
        let xpad = pad_channels(&xv[bi * ci * hw..(bi + 1) * ci * hw], ci, h, w, pad);
        for oc in 0..co {
            let gbase = (bi * co + oc) * hw;
            for ic in 0..ci {
                let kbase = (oc * ci + ic) * kk;
                let ibase = ic * phw;
                for ky in 0..ksize {
                    for kx in 0..ksize {
                        let mut acc = 0.0;
                        for oy in 0..h {
                            let grow = &gout[gbase + oy * w..gbase + (oy + 1) * w];
                            let xrow = &xpad[ibase + (oy + ky) * pw + kx..][..w];
                            for s in 0..w {
                                acc += grow[s] * xrow[s];
                            }
                        }
                        gk[kbase + ky * ksize + kx] += acc;
                    }
                }
            }
        }
    }
    gk
}

#[allow(clippy::too_many_arguments)]
fn temporal_forward(
    xv: &[f64],
    kv: &[f64],
    bv: &[f64],
    batch: usize,
    frames: usize,
    ci: usize,
    co: usize,
    hw: usize,
    kt: usize,
) -> Vec<f64> {
    let pad = kt / 2;
    let mut out = vec![0.0; batch * frames * co * hw];
    for bi in 0..batch {
        for fo in 0..frames {
            for oc in 0..co {
                let obase = ((bi * frames + fo) * co + oc) * hw;
                out[obase..obase + hw].fill(bv[oc]);
                for t in 0..kt {
                    let fin = fo as isize + t as isize - pad as isize;
                    if fin < 0 || fin >= frames as isize {
                        continue;
                    }
                    let fin = fin as usize;
                    for ic in 0..ci {
                        let kvv = kv[(oc * ci + ic) * kt + t];
                        if kvv == 0.0 {
                            continue;
                        }
                        let xrow = &xv[((bi * frames + fin) * ci + ic) * hw..][..hw];
                        let orow = &mut out[obase..obase + hw];
                        for s in 0..hw {
                            orow[s] += kvv * xrow[s];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + eps;
            let fp = f(&xp);
            xp[i] = x[i] - eps;
            let fm = f(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * eps);
        }
        g
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!(
                (x - y).abs() / denom < tol,
                "{what}[{i}]: {x} vs {y}"
            );
        }
    }

    #[test]
    fn add_mul_backward_matches_finite_differences() {
        let xs = vec![0.3, -1.2, 2.0];
        let f = |v: &[f64]| {
            let mut g = Graph::new();
            let a = g.leaf(vec![3], v.to_vec(), true);
            let b = g.leaf(vec![3], vec![2.0, -0.5, 1.5], false);
            let m = g.mul(a, b);
            let s = g.add(m, a);
            let out = g.sum_all(s);
            g.scalar_value(out)
        };
        let numeric = finite_diff(f, &xs, 1e-5);
        let mut g = Graph::new();
        let a = g.leaf(vec![3], xs.clone(), true);
        let b = g.leaf(vec![3], vec![2.0, -0.5, 1.5], false);
        let m = g.mul(a, b);
        let s = g.add(m, a);
        let out = g.sum_all(s);
        g.backward(out);
        assert_close(g.grad(a), &numeric, 1e-6, "grad");
    }

    #[test]
    fn linear_relu_chain_gradients() {
        let w0 = vec![0.2, -0.3, 0.5, 0.7, 0.1, -0.6];
        let f = |wv: &[f64]| {
            let mut g = Graph::new();
            let x = g.leaf(vec![2, 3], vec![0.5, -1.0, 0.25, 1.5, 0.3, -0.7], false);
            let w = g.leaf(vec![2, 3], wv.to_vec(), true);
            let b = g.leaf(vec![2], vec![0.05, -0.02], false);
            let y = g.linear(x, w, b);
            let r = g.relu(y);
            let sq = g.mul(r, r);
            let out = g.sum_all(sq);
            g.scalar_value(out)
        };
        let numeric = finite_diff(f, &w0, 1e-5);
        let mut g = Graph::new();
        let x = g.leaf(vec![2, 3], vec![0.5, -1.0, 0.25, 1.5, 0.3, -0.7], false);
        let w = g.leaf(vec![2, 3], w0.clone(), true);
        let b = g.leaf(vec![2], vec![0.05, -0.02], false);
        let y = g.linear(x, w, b);
        let r = g.relu(y);
        let sq = g.mul(r, r);
        let out = g.sum_all(sq);
        g.backward(out);
        assert_close(g.grad(w), &numeric, 1e-5, "dW");
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let (batch, ci, co, h, w) = (2, 2, 3, 4, 4);
        let n_x = batch * ci * h * w;
        let x0: Vec<f64> = (0..n_x).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect();
        let k0: Vec<f64> = (0..co * ci * 9).map(|i| ((i * 53 % 23) as f64 - 11.0) / 20.0).collect();
        let b0: Vec<f64> = vec![0.1, -0.2, 0.05];
        let build = |xv: &[f64], kv: &[f64], bv: &[f64]| {
            let mut g = Graph::new();
            let x = g.leaf(vec![batch, ci, h, w], xv.to_vec(), true);
            let k = g.leaf(vec![co, ci, 3, 3], kv.to_vec(), true);
            let b = g.leaf(vec![co], bv.to_vec(), true);
            let y = g.conv2d(x, k, b);
            let sq = g.mul(y, y);
            let out = g.sum_all(sq);
            (g, x, k, b, out)
        };
        let (mut g, x, k, b, out) = build(&x0, &k0, &b0);
        g.backward(out);
        let gx = g.grad(x).to_vec();
        let gk = g.grad(k).to_vec();
        let gb = g.grad(b).to_vec();

        let nx = finite_diff(|v| { let (g, _, _, _, o) = build(v, &k0, &b0); g.scalar_value(o) }, &x0, 1e-5);
        let nk = finite_diff(|v| { let (g, _, _, _, o) = build(&x0, v, &b0); g.scalar_value(o) }, &k0, 1e-5);
        let nb = finite_diff(|v| { let (g, _, _, _, o) = build(&x0, &k0, v); g.scalar_value(o) }, &b0, 1e-5);
        assert_close(&gx, &nx, 1e-5, "dX");
        assert_close(&gk, &nk, 1e-5, "dK");
        assert_close(&gb, &nb, 1e-5, "dB");
    }

    #[test]
    fn temporal_conv_gradients_match_finite_differences() {
        let (batch, frames, ci, co, hw, kt) = (1, 4, 2, 2, 3, 3);
        let n_x = batch * frames * ci * hw;
        let x0: Vec<f64> = (0..n_x).map(|i| ((i * 31 % 13) as f64 - 6.0) / 8.0).collect();
        let k0: Vec<f64> = (0..co * ci * kt).map(|i| ((i * 41 % 19) as f64 - 9.0) / 15.0).collect();
        let b0 = vec![0.02, -0.04];
        let build = |xv: &[f64], kv: &[f64]| {
            let mut g = Graph::new();
            let x = g.leaf(vec![batch * frames, ci, 1, hw], xv.to_vec(), true);
            let k = g.leaf(vec![co, ci, kt], kv.to_vec(), true);
            let b = g.leaf(vec![co], b0.clone(), true);
            let y = g.temporal_conv(x, k, b, frames);
            let sq = g.mul(y, y);
            let out = g.sum_all(sq);
            (g, x, k, out)
        };
        let (mut g, x, k, out) = build(&x0, &k0);
        g.backward(out);
        let gx = g.grad(x).to_vec();
        let gk = g.grad(k).to_vec();
        let nx = finite_diff(|v| { let (g, _, _, o) = build(v, &k0); g.scalar_value(o) }, &x0, 1e-5);
        let nk = finite_diff(|v| { let (g, _, _, o) = build(&x0, v); g.scalar_value(o) }, &k0, 1e-5);
        assert_close(&gx, &nx, 1e-5, "dX");
        assert_close(&gk, &nk, 1e-5, "dK");
    }

    #[test]
    fn softmax_topt_weighted_ce_gradients() {
        let s0 = vec![0.4, -0.3, 0.9, 0.1, -0.8, 0.6];
        let logits = vec![1.0, -0.5, 0.2, 0.4, 0.9, -1.2];
        let build = |sv: &[f64]| {
            let mut g = Graph::new();
            let scores = g.leaf(vec![2, 3], sv.to_vec(), true);
            let pooled = g.topt_rows(scores, 2);
            let alpha = g.softmax_temp(pooled, 0.7);
            let lg = g.leaf(vec![2, 3], logits.clone(), false);
            let loss = g.weighted_ce(lg, &[2, 0], alpha);
            (g, scores, loss)
        };
        let (mut g, scores, loss) = build(&s0);
        g.backward(loss);
        let analytic = g.grad(scores).to_vec();
        let numeric = finite_diff(|v| { let (g, _, l) = build(v); g.scalar_value(l) }, &s0, 1e-6);
        assert_close(&analytic, &numeric, 1e-5, "dScores");
    }

    #[test]
    fn grl_flips_and_scales_gradient() {
        let x0 = vec![1.2, -0.5];
        let run = |lambda: Option<f64>| {
            let mut g = Graph::new();
            let x = g.leaf(vec![2], x0.clone(), true);
            let y = match lambda {
                Some(l) => g.grl(x, l),
                None => x,
            };
            let w = g.leaf(vec![2], vec![2.0, 4.0], false);
            let m = g.mul(y, w);
            let out = g.sum_all(m);
            g.backward(out);
            (g.value(y).to_vec(), g.grad(x).to_vec())
        };
        let (fwd, base) = run(None);
        assert_eq!(fwd, x0);
        assert_eq!(base, vec![2.0, 4.0]);
        let (fwd1, g1) = run(Some(1.0));
        assert_eq!(fwd1, x0, "forward must be the identity");
        assert_eq!(g1, vec![-2.0, -4.0]);
        let (_, ghalf) = run(Some(0.5));
        assert_eq!(ghalf, vec![-1.0, -2.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(vec![2], vec![1.0, 2.0], true);
        let d = g.detach(x);
        let m = g.mul(d, d);
        let out = g.sum_all(m);
        g.backward(out);
        assert!(g.grad(x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn topt_breaks_ties_toward_lower_index() {
        let mut g = Graph::new();
        let x = g.leaf(vec![1, 4], vec![1.0, 3.0, 3.0, 0.5], true);
        let s = g.topt_rows(x, 2);
        assert_eq!(g.value(s), &[6.0]);
        let out = g.sum_all(s);
        g.backward(out);
        // both 3.0s picked (indices 1 and 2), index 3 and 0 untouched
        assert_eq!(g.grad(x), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn bce_mean_values() {
        let mut g = Graph::new();
        let p = g.leaf(vec![2], vec![0.5, 0.5], false);
        let l = g.bce_mean(p, true);
        assert!((g.scalar_value(l) - std::f64::consts::LN_2).abs() < 1e-12);
        let p1 = g.leaf(vec![1], vec![1.0], false);
        let l1 = g.bce_mean(p1, true);
        assert!(g.scalar_value(l1) >= 0.0 && g.scalar_value(l1) < 1e-6);
    }
}
