//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! a scalar with respect to every node; [`Gradients::accumulate_into`] adds
//! the parameter gradients into a [`ParamStore`].

use super::kernels::{gemm, ConvGeom, ConvSpec};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const BN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Dropout(Var, Vec<f64>),
    Reshape(Var),
    ConcatChannels(Vec<Var>),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Bmm {
        a: Var,
        b: Var,
        a_t: bool,
        b_t: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    SoftmaxLast(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Batch statistics (train) are differentiated through; running
        /// statistics (eval) are constants.
        batch_stats: bool,
    },
    GlobalAvgPool(Var),
    ScaleChannels(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Per-channel statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the normalised elements.
    pub var: Vec<f64>,
    /// Elements per channel the statistics were computed over.
    pub count: usize,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("expected [N, C, ...], got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `t` as a leaf; gradients flow to it when `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad;
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: t.into_data(),
            op: Op::Leaf,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    /// Records a copy of a stored parameter, bound for gradient accumulation.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.param(id).tensor.clone().with_grad());
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * k).collect();
        self.push(self.shape(a).to_vec(), v, Op::Scale(a, k), &[a])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(self.shape(a).to_vec(), v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(self.shape(a).to_vec(), v, Op::Sigmoid(a), &[a])
    }

    /// Inverted dropout: `keep[i]` selects survivors, which are scaled by
    /// `1 / (1 - p)`. Pass `None` for evaluation (identity).
    pub fn dropout(&mut self, a: Var, p: f64, keep: Option<&[bool]>) -> Result<Var> {
        let Some(keep) = keep else {
            return Ok(a);
        };
        if keep.len() != self.value(a).len() {
            return Err(Error::Shape("dropout mask length mismatch".into()));
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Argument(format!("dropout rate {p} outside [0, 1)")));
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let v = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(self.push(self.shape(a).to_vec(), v, Op::Dropout(a, mask), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(a)
            )));
        }
        let v = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), v, Op::Reshape(a), &[a]))
    }

    /// Concatenates `[N, C_i, ...]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let (n, _, rest) = channel_layout(self.shape(first))?;
        let tail = self.shape(first)[2..].to_vec();
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 2 || s[0] != n || s[2..] != tail[..] {
                return Err(Error::Shape(format!(
                    "cannot concatenate {s:?} with {:?}",
                    self.shape(first)
                )));
            }
            channels += s[1];
        }
        let mut v = Vec::with_capacity(n * channels * rest);
        for i in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                v.extend_from_slice(&self.value(p)[i * c * rest..(i + 1) * c * rest]);
            }
        }
        let mut shape = vec![n, channels];
        shape.extend(tail);
        Ok(self.push(shape, v, Op::ConcatChannels(parts.to_vec()), parts))
    }

    /// Cross-correlation of `x: [N, C, D, H, W]` (or `[N, C, H, W]` when the
    /// spec has unit depth) with `w: [C', C, kd, kh, kw]` (or `[C', C, kh, kw]`).
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let is_2d = xs.len() == 4;
        let input = match xs.len() {
            4 => [1, xs[2], xs[3]],
            5 => [xs[2], xs[3], xs[4]],
            _ => return Err(Error::Shape(format!("conv input must be 4D or 5D, got {xs:?}"))),
        };
        if is_2d && spec.kernel[0] != 1 {
            return Err(Error::Shape("2D input needs a unit-depth kernel".into()));
        }
        if xs[1] != spec.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, conv expects {}",
                xs[1], spec.in_channels
            )));
        }
        let expect_w = if is_2d {
            spec.weight_shape_2d()
        } else {
            spec.weight_shape_3d()
        };
        if self.shape(w) != expect_w.as_slice() {
            return Err(Error::Shape(format!(
                "weight shape {:?}, expected {expect_w:?}",
                self.shape(w)
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [spec.out_channels] {
                return Err(Error::Shape(format!("bias shape {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(spec, input)?;
        let n = xs[0];
        let (k, p) = (spec.patch_len(), geom.out_plane());
        let in_size = spec.in_channels * geom.in_plane();
        let out_c = spec.out_channels;
        // columns of every sample side by side: [k, n * p]
        let np = n * p;
        let mut cols = vec![0.0; k * np];
        for i in 0..n {
            geom.im2col(&self.value(x)[i * in_size..(i + 1) * in_size], &mut cols, np, i * p);
        }
        let mut y = vec![0.0; out_c * np];
        gemm(out_c, k, np, self.value(w), false, &cols, false, 0.0, &mut y);
        let bias = b.map(|b| self.value(b));
        let mut out = vec![0.0; n * out_c * p];
        for i in 0..n {
            for o in 0..out_c {
                let bv = bias.map_or(0.0, |bv| bv[o]);
                let src = &y[o * np + i * p..o * np + (i + 1) * p];
                for (d, v) in out[(i * out_c + o) * p..(i * out_c + o + 1) * p].iter_mut().zip(src) {
                    *d = v + bv;
                }
            }
        }
        let o = geom.output;
        let shape = if is_2d {
            vec![n, out_c, o[1], o[2]]
        } else {
            vec![n, out_c, o[0], o[1], o[2]]
        };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(shape, out, Op::Conv { x, w, b, geom, cols }, &inputs))
    }

    /// `y = x W^T + b` for `x: [N, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Shape(format!("linear: x {xs:?}, w {ws:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::Shape(format!("bias shape {:?}", self.shape(b))));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(self.value(b));
            }
        }
        gemm(n, din, dout, self.value(x), false, self.value(w), true, 1.0, &mut out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(vec![n, dout], out, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matrix product over the leading axis of two 3D tensors, with
    /// optional transposition of the trailing two axes of either operand.
    pub fn bmm(&mut self, a: Var, b: Var, a_t: bool, b_t: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::Shape(format!("bmm: {sa:?} x {sb:?}")));
        }
        let (m, k) = if a_t { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if b_t { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(Error::Shape(format!("bmm inner dims {k} vs {k2}")));
        }
        let batch = sa[0];
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &self.value(a)[i * m * k..(i + 1) * m * k],
                a_t,
                &self.value(b)[i * k * n..(i + 1) * k * n],
                b_t,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push(
            vec![batch, m, n],
            out,
            Op::Bmm { a, b, a_t, b_t, m, k, n },
            &[a, b],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| Error::Shape("softmax of a scalar".into()))?;
        let mut v = self.value(a).to_vec();
        for row in v.chunks_mut(last) {
            softmax_in_place(row);
        }
        Ok(self.push(shape, v, Op::SoftmaxLast(a), &[a]))
    }

    /// Batch normalisation over axis 1 of `[N, C, ...]` using the batch's
    /// own statistics. Returns the output and the statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (n, c, rest) = channel_layout(self.shape(x))?;
        self.check_affine(gamma, beta, c)?;
        let count = n * rest;
        if count == 0 {
            return Err(Error::Argument("batch norm over an empty batch".into()));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let s = &xv[(i * c + ch) * rest..(i * c + ch + 1) * rest];
                mean[ch] += s.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for i in 0..n {
            for ch in 0..c {
                let s = &xv[(i * c + ch) * rest..(i * c + ch + 1) * rest];
                var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let out = self.normalize(x, gamma, beta, &mean, &inv_std, true);
        Ok((out, BatchStats { mean, var, count }))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        let (_, c, _) = channel_layout(self.shape(x))?;
        self.check_affine(gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::Shape("running statistics length mismatch".into()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        Ok(self.normalize(x, gamma, beta, mean, &inv_std, false))
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "batch norm affine params {:?}/{:?} for {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok(())
    }

    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64], batch_stats: bool) -> Var {
        let shape = self.shape(x).to_vec();
        let (n, c, rest) = (shape[0], shape[1], shape[2..].iter().product::<usize>());
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * rest;
                for j in base..base + rest {
                    let h = (xv[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = g[ch] * h + b[ch];
                }
            }
        }
        self.push(
            shape,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.to_vec(),
                batch_stats,
            },
            &[x, gamma, beta],
        )
    }

    /// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, rest) = channel_layout(self.shape(x))?;
        if rest == 0 {
            return Err(Error::Shape("pooling over an empty extent".into()));
        }
        let v = self
            .value(x)
            .chunks(rest)
            .map(|s| s.iter().sum::<f64>() / rest as f64)
            .collect();
        Ok(self.push(vec![n, c], v, Op::GlobalAvgPool(x), &[x]))
    }

    /// Multiplies channel `c` of sample `n` of `u: [N, C, ...]` by `s[n, c]`.
    pub fn scale_channels(&mut self, u: Var, s: Var) -> Result<Var> {
        let (n, c, rest) = channel_layout(self.shape(u))?;
        if self.shape(s) != [n, c] {
            return Err(Error::Shape(format!(
                "channel scales {:?} for input {:?}",
                self.shape(s),
                self.shape(u)
            )));
        }
        let sv = self.value(s);
        let v = self
            .value(u)
            .chunks(rest)
            .zip(sv)
            .flat_map(|(chunk, &k)| chunk.iter().map(move |x| x * k))
            .collect();
        Ok(self.push(self.shape(u).to_vec(), v, Op::ScaleChannels(u, s), &[u, s]))
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Shape(format!(
                "logits {s:?} for {} labels",
                labels.len()
            )));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Argument(format!("label {l} out of range for {k} classes")));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[l];
            softmax_in_place(row);
        }
        let loss = loss / n as f64;
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Sign pattern of every ReLU input on the tape. Two evaluations with the
    /// same pattern lie on the same smooth piece of the function.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                sig.extend(self.value(a).iter().map(|&v| v > 0.0));
            }
        }
        sig
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.nodes.iter().map(|n| n.param).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * k)),
            Op::Sum(a) => acc(*a, &|d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        if x[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Dropout(a, mask) => acc(*a, &|d| {
                for i in 0..d.len() {
                    d[i] += g[i] * mask[i];
                }
            }),
            Op::Reshape(a) => acc(*a, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::ConcatChannels(parts) => {
                let n = node.shape[0];
                let total_c = node.shape[1];
                let rest: usize = node.shape[2..].iter().product();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    acc(p, &|d| {
                        for i in 0..n {
                            let src = &g[(i * total_c + offset) * rest..(i * total_c + offset + c) * rest];
                            for (dv, gv) in d[i * c * rest..(i + 1) * c * rest].iter_mut().zip(src) {
                                *dv += gv;
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::Conv { x, w, b, geom, cols } => {
                let spec = geom.spec;
                let n = node.shape[0];
                let (k, p, out_c) = (spec.patch_len(), geom.out_plane(), spec.out_channels);
                let in_size = spec.in_channels * geom.in_plane();
                if let Some(b) = b {
                    acc(*b, &|d| {
                        for i in 0..n {
                            for o in 0..out_c {
                                d[o] += g[(i * out_c + o) * p..(i * out_c + o + 1) * p].iter().sum::<f64>();
                            }
                        }
                    });
                }
                let np = n * p;
                let mut gt = vec![0.0; out_c * np];
                for i in 0..n {
                    for o in 0..out_c {
                        gt[o * np + i * p..o * np + (i + 1) * p]
                            .copy_from_slice(&g[(i * out_c + o) * p..(i * out_c + o + 1) * p]);
                    }
                }
                acc(*w, &|d| gemm(out_c, np, k, &gt, false, cols, true, 1.0, d));
                if self.wants(*x) {
                    let wv = self.value(*w);
                    acc(*x, &|d| {
                        let mut dcols = vec![0.0; k * np];
                        gemm(k, out_c, np, wv, true, &gt, false, 0.0, &mut dcols);
                        for i in 0..n {
                            geom.col2im(&dcols, np, i * p, &mut d[i * in_size..(i + 1) * in_size]);
                        }
                    });
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                if let Some(b) = b {
                    acc(*b, &|d| {
                        for row in g.chunks(dout) {
                            d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    });
                }
                let (xv, wv) = (self.value(*x), self.value(*w));
                acc(*w, &|d| gemm(dout, n, din, g, true, xv, false, 1.0, d));
                acc(*x, &|d| gemm(n, dout, din, g, false, wv, false, 1.0, d));
            }
            Op::Bmm { a, b, a_t, b_t, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let batch = node.shape[0];
                let (va, vb) = (self.value(*a), self.value(*b));
                // C = A B: dA = dC B^T, dB = A^T dC (transposes folded in)
                acc(*a, &|d| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &vb[i * k * n..(i + 1) * k * n];
                        let di = &mut d[i * m * k..(i + 1) * m * k];
                        if *a_t {
                            // stored A is k x m: dA_stored = op(B) dC^T
                            gemm(k, n, m, bi, *b_t, gi, true, 1.0, di);
                        } else {
                            gemm(m, n, k, gi, false, bi, !*b_t, 1.0, di);
                        }
                    }
                });
                acc(*b, &|d| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &va[i * m * k..(i + 1) * m * k];
                        let di = &mut d[i * k * n..(i + 1) * k * n];
                        if *b_t {
                            // stored B is n x k: dB_stored = dC^T op(A)
                            gemm(n, m, k, gi, true, ai, *a_t, 1.0, di);
                        } else {
                            gemm(k, m, n, ai, !*a_t, gi, false, 1.0, di);
                        }
                    }
                });
            }
            Op::SoftmaxLast(a) => {
                let last = *node.shape.last().unwrap();
                let y = &node.value;
                acc(*a, &|d| {
                    for ((dr, gr), yr) in d.chunks_mut(last).zip(g.chunks(last)).zip(y.chunks(last)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for j in 0..last {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, rest) = channel_layout(&node.shape).expect("checked in forward");
                let m = (n * rest) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * rest;
                        for j in base..base + rest {
                            sum_g[ch] += g[j];
                            sum_gx[ch] += g[j] * xhat[j];
                        }
                    }
                }
                acc(*gamma, &|d| d.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s));
                acc(*beta, &|d| d.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s));
                let gv = self.value(*gamma);
                acc(*x, &|d| {
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * rest;
                            let k = gv[ch] * inv_std[ch];
                            for j in base..base + rest {
                                d[j] += if *batch_stats {
                                    k * (g[j] - sum_g[ch] / m - xhat[j] * sum_gx[ch] / m)
                                } else {
                                    k * g[j]
                                };
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let rest: usize = self.shape(*x)[2..].iter().product();
                acc(*x, &|d| {
                    for (chunk, gv) in d.chunks_mut(rest).zip(g) {
                        chunk.iter_mut().for_each(|v| *v += gv / rest as f64);
                    }
                });
            }
            Op::ScaleChannels(u, s) => {
                let rest: usize = node.shape[2..].iter().product();
                let (uv, sv) = (self.value(*u), self.value(*s));
                acc(*u, &|d| {
                    for ((dc, gc), k) in d.chunks_mut(rest).zip(g.chunks(rest)).zip(sv) {
                        dc.iter_mut().zip(gc).for_each(|(d, g)| *d += g * k);
                    }
                });
                acc(*s, &|d| {
                    for ((dv, gc), uc) in d.iter_mut().zip(g.chunks(rest)).zip(uv.chunks(rest)) {
                        *dv += gc.iter().zip(uc).map(|(g, u)| g * u).sum::<f64>();
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.len() / n.max(1);
                acc(*logits, &|d| {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            d[i * k + j] += g[0] * (probs[i * k + j] - onehot) / n as f64;
                        }
                    }
                });
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<ParamId>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Adds the gradient of every parameter leaf into the store. Parameters
    /// the loss does not reach still receive an (all-zero) gradient buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            let t = &mut store.param_mut(id).tensor;
            if t.grad.is_none() {
                t.grad = Some(vec![0.0; t.len()]);
            }
        }
        for (g, p) in self.grads.iter().zip(&self.params) {
            if let (Some(g), Some(id)) = (g, p) {
                store.param_mut(*id).tensor.accumulate_grad(g);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}
