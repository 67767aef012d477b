//! Wengert-style computation record.
//!
//! Every operation appends a node holding its value and enough saved state
//! to compute vector-Jacobian products. Nodes only ever reference earlier
//! nodes, so replaying indices in descending order is a valid reverse
//! topological order and visits each node once.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics source.
#[derive(Clone, Debug)]
pub enum Normalization<S> {
    /// Standardize with the statistics of the current batch.
    Batch { eps: S },
    /// Standardize with externally supplied (running) statistics.
    Fixed { mean: Vec<S>, var: Vec<S>, eps: S },
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Transpose(Var),
    ChannelBias {
        input: Var,
        bias: Var,
    },
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MatmulLast {
        input: Var,
        matrix: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<S>,
        inv_std: Vec<S>,
        batch_stats: bool,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    FrameMean(Var),
    ScaleFrames {
        input: Var,
        scale: Var,
    },
    SelectFrames {
        input: Var,
        indices: Vec<Vec<usize>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds another backward pass into this one (fan-in across calls).
    pub fn accumulate(&mut self, other: &Gradients<S>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize_with(other.grads.len(), || None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }
}

#[derive(Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(S::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose2()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `(B, C, T, N)` map.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let &[b, c, t, n] = self.shape(input) else {
            return Err(shape_err!("channel_bias needs (B,C,T,N), got {:?}", self.shape(input)));
        };
        if self.shape(bias) != [c] {
            return Err(shape_err!("bias {:?} for {c} channels", self.shape(bias)));
        }
        let bv = self.value(bias).data();
        let plane = t * n;
        let mut out = self.value(input).data().to_vec();
        for (k, chunk) in out.chunks_exact_mut(plane).enumerate() {
            let add = bv[k % c];
            chunk.iter_mut().for_each(|v| *v += add);
        }
        let value = Tensor::new(vec![b, c, t, n], out)?;
        Ok(self.push(value, Op::ChannelBias { input, bias }, &[input, bias]))
    }

    /// Temporal convolution of a `(B, C_in, T, N)` map with a
    /// `(C_out, C_in, K_t, 1)` kernel and optional `(C_out)` bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv_geom(self.shape(input), self.shape(kernel), stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(shape_err!(
                    "bias {:?} for {} output channels",
                    self.shape(b),
                    geom.c_out
                ));
            }
        }
        let out = kernels::conv_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![geom.batch, geom.c_out, geom.t_out, geom.joints], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// Contraction of the last axis with a square matrix:
    /// `out[.., i] = Σ_j input[.., j] · matrix[j, i]`.
    pub fn matmul_last(&mut self, input: Var, matrix: Var) -> Result<Var> {
        let n = *self.shape(input).last().unwrap();
        if self.shape(matrix) != [n, n] {
            return Err(shape_err!(
                "matmul_last: input last axis {n}, matrix {:?}",
                self.shape(matrix)
            ));
        }
        let out = kernels::matmul_last_forward(self.value(input).data(), self.value(matrix).data(), n);
        let value = Tensor::new(self.shape(input).to_vec(), out)?;
        Ok(self.push(value, Op::MatmulLast { input, matrix }, &[input, matrix]))
    }

    /// Matrix product of `[m, k]` and `[k, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[m, k], &[k2, p]) = (self.shape(a), self.shape(b)) else {
            return Err(shape_err!(
                "matmul needs matrices, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            ));
        };
        if k != k2 {
            return Err(shape_err!("matmul inner extents {k} vs {k2}"));
        }
        let out = kernels::matmul_forward(self.value(a).data(), self.value(b).data(), m, k, p);
        Ok(self.push(Tensor::new(vec![m, p], out)?, Op::Matmul { a, b }, &[a, b]))
    }

    /// Per-channel batch normalization of a `(B, C, T, N)` map.
    ///
    /// Returns the output plus the mean and biased variance that were used,
    /// so callers can update running statistics.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        norm: Normalization<S>,
    ) -> Result<(Var, Vec<S>, Vec<S>)> {
        let &[batch, channels, t, n] = self.shape(input) else {
            return Err(shape_err!("batch_norm needs (B,C,T,N), got {:?}", self.shape(input)));
        };
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(shape_err!("batch_norm affine parameters must have {channels} entries"));
        }
        let plane = t * n;
        let x = self.value(input).data();
        let (mean, var, eps, batch_stats) = match norm {
            Normalization::Batch { eps } => {
                let (m, v) = kernels::channel_stats(x, batch, channels, plane);
                (m, v, eps, true)
            }
            Normalization::Fixed { mean, var, eps } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(shape_err!("running statistics must have {channels} entries"));
                }
                (mean, var, eps, false)
            }
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![S::zero(); x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * plane;
                for k in base..base + plane {
                    out[k] = g[c] * (x[k] - mean[c]) * inv_std[c] + bt[c];
                }
            }
        }
        let value = Tensor::new(vec![batch, channels, t, n], out)?;
        let v = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean: mean.clone(),
                inv_std,
                batch_stats,
            },
            &[input, gamma, beta],
        );
        Ok((v, mean, var))
    }

    /// `(B, C, T, N) -> (B, C)` mean over frames and joints.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let &[b, c, t, n] = self.shape(input) else {
            return Err(shape_err!(
                "global_avg_pool needs (B,C,T,N), got {:?}",
                self.shape(input)
            ));
        };
        let denom = S::lit((t * n) as f64);
        let data: Vec<S> = self
            .value(input)
            .data()
            .chunks_exact(t * n)
            .map(|p| p.iter().copied().sum::<S>() / denom)
            .collect();
        Ok(self.push(Tensor::new(vec![b, c], data)?, Op::GlobalAvgPool(input), &[input]))
    }

    /// `(B, K) -> (B, O)` affine map with weight `(O, K)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (&[b, k], &[o, k2]) = (self.shape(input), self.shape(weight)) else {
            return Err(shape_err!(
                "linear: input {:?}, weight {:?}",
                self.shape(input),
                self.shape(weight)
            ));
        };
        if k != k2 {
            return Err(shape_err!("linear: {k} input features, weight expects {k2}"));
        }
        if let Some(bv) = bias {
            if self.shape(bv) != [o] {
                return Err(shape_err!("linear bias {:?}, expected [{o}]", self.shape(bv)));
            }
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![S::zero(); b * o];
        for r in 0..b {
            for c in 0..o {
                let mut acc = bias.map_or(S::zero(), |bv| self.value(bv).data()[c]);
                for j in 0..k {
                    acc += x[r * k + j] * w[c * k + j];
                }
                out[r * o + c] = acc;
            }
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::new(vec![b, o], out)?,
            Op::Linear { input, weight, bias },
            &inputs,
        ))
    }

    /// `(B, C, T, N) -> (B, T)` mean over channels and joints.
    pub fn frame_mean(&mut self, input: Var) -> Result<Var> {
        let &[b, c, t, n] = self.shape(input) else {
            return Err(shape_err!("frame_mean needs (B,C,T,N), got {:?}", self.shape(input)));
        };
        let x = self.value(input).data();
        let denom = S::lit((c * n) as f64);
        let mut out = vec![S::zero(); b * t];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let base = ((bi * c + ci) * t + ti) * n;
                    out[bi * t + ti] += x[base..base + n].iter().copied().sum::<S>();
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= denom);
        Ok(self.push(Tensor::new(vec![b, t], out)?, Op::FrameMean(input), &[input]))
    }

    /// Multiplies every frame `t` of sample `b` by `scale[b, t]`.
    pub fn scale_frames(&mut self, input: Var, scale: Var) -> Result<Var> {
        let &[b, c, t, n] = self.shape(input) else {
            return Err(shape_err!("scale_frames needs (B,C,T,N), got {:?}", self.shape(input)));
        };
        if self.shape(scale) != [b, t] {
            return Err(shape_err!(
                "scale_frames: scale {:?} for input {:?}",
                self.shape(scale),
                self.shape(input)
            ));
        }
        let s = self.value(scale).data();
        let mut out = self.value(input).data().to_vec();
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let base = ((bi * c + ci) * t + ti) * n;
                    let f = s[bi * t + ti];
                    out[base..base + n].iter_mut().for_each(|v| *v *= f);
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![b, c, t, n], out)?,
            Op::ScaleFrames { input, scale },
            &[input, scale],
        ))
    }

    /// Gathers frames per sample: `out[b, :, k, :] = input[b, :, indices[b][k], :]`.
    pub fn select_frames(&mut self, input: Var, indices: Vec<Vec<usize>>) -> Result<Var> {
        let &[b, c, t, n] = self.shape(input) else {
            return Err(shape_err!("select_frames needs (B,C,T,N), got {:?}", self.shape(input)));
        };
        if indices.len() != b {
            return Err(shape_err!("select_frames: {} index lists for batch {b}", indices.len()));
        }
        let k = indices[0].len();
        if k == 0 || indices.iter().any(|ix| ix.len() != k || ix.iter().any(|&i| i >= t)) {
            return Err(Error::OutOfRange(format!(
                "select_frames: indices must be {k} frames below {t}"
            )));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * k * n);
        for (bi, ix) in indices.iter().enumerate() {
            for ci in 0..c {
                for &ti in ix {
                    let base = ((bi * c + ci) * t + ti) * n;
                    out.extend_from_slice(&x[base..base + n]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![b, c, k, n], out)?,
            Op::SelectFrames { input, indices },
            &[input],
        ))
    }

    /// Mean softmax cross-entropy of `(B, K)` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let &[b, k] = self.shape(logits) else {
            return Err(shape_err!("cross_entropy needs (B,K), got {:?}", self.shape(logits)));
        };
        if labels.len() != b {
            return Err(shape_err!("{} labels for batch {b}", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::OutOfRange(format!("label {bad} with {k} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![S::zero(); b * k];
        let mut loss = S::zero();
        for r in 0..b {
            let row = &z[r * k..(r + 1) * k];
            let (p, lse) = softmax_row(row);
            loss += lse - row[labels[r]];
            probs[r * k..(r + 1) * k].copy_from_slice(&p);
        }
        loss /= S::lit(b as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Hash of every piecewise-linear branch taken on this tape: the sign
    /// pattern at each ReLU and every frame selection. Two evaluations with
    /// equal signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &v in self.nodes[a.0].value.data() {
                        (v > S::zero()).hash(&mut h);
                    }
                }
                Op::SelectFrames { indices, .. } => indices.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar node. Only leaves keep their gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if !self.value(loss).is_scalar() {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), S::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, gd.to_vec());
                self.acc(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gd.to_vec());
                self.acc(grads, *b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = self.value(*b).data();
                    self.acc(grads, *a, gd.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                }
                if wants(*b) {
                    let av = self.value(*a).data();
                    self.acc(grads, *b, gd.iter().zip(av).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, gd.iter().map(|&v| v * *c).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                    .collect();
                self.acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(&gv, &yv)| gv * yv * (S::one() - yv)).collect();
                self.acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.acc(grads, *a, vec![gd[0]; n]);
            }
            Op::Transpose(a) => {
                let d = g.transpose2().expect("matrix gradient").into_data();
                self.acc(grads, *a, d);
            }
            Op::ChannelBias { input, bias } => {
                self.acc(grads, *input, gd.to_vec());
                if wants(*bias) {
                    let c = self.shape(*bias)[0];
                    let plane = gd.len() / (self.shape(*input)[0] * c);
                    let mut db = vec![S::zero(); c];
                    for (k, chunk) in gd.chunks_exact(plane).enumerate() {
                        db[k % c] += chunk.iter().copied().sum::<S>();
                    }
                    self.acc(grads, *bias, db);
                }
            }
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (dx, dw, db) = kernels::conv_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gd,
                    wants(*input),
                    wants(*kernel),
                    bias.is_some_and(wants),
                );
                if let Some(dx) = dx {
                    self.acc(grads, *input, dx);
                }
                if let Some(dw) = dw {
                    self.acc(grads, *kernel, dw);
                }
                if let (Some(b), Some(db)) = (bias, db) {
                    self.acc(grads, *b, db);
                }
            }
            Op::MatmulLast { input, matrix } => {
                let n = self.value(*matrix).shape()[0];
                let (dx, dm) = kernels::matmul_last_backward(
                    self.value(*input).data(),
                    self.value(*matrix).data(),
                    gd,
                    n,
                    wants(*input),
                    wants(*matrix),
                );
                if let Some(dx) = dx {
                    self.acc(grads, *input, dx);
                }
                if let Some(dm) = dm {
                    self.acc(grads, *matrix, dm);
                }
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let p = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if wants(*a) {
                    let mut da = vec![S::zero(); m * k];
                    for r in 0..m {
                        for j in 0..k {
                            da[r * k + j] = (0..p).map(|c| gd[r * p + c] * bv[j * p + c]).sum();
                        }
                    }
                    self.acc(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = vec![S::zero(); k * p];
                    for r in 0..m {
                        for j in 0..k {
                            let x = av[r * k + j];
                            for c in 0..p {
                                db[j * p + c] += x * gd[r * p + c];
                            }
                        }
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let &[batch, channels, t, n] = self.shape(*input) else {
                    unreachable!("checked in forward")
                };
                let plane = t * n;
                let x = self.value(*input).data();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![S::zero(); channels];
                let mut dbeta = vec![S::zero(); channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * plane;
                        for k in base..base + plane {
                            let xh = (x[k] - mean[c]) * inv_std[c];
                            dgamma[c] += gd[k] * xh;
                            dbeta[c] += gd[k];
                        }
                    }
                }
                if wants(*input) {
                    let count = S::lit((batch * plane) as f64);
                    let mut dx = vec![S::zero(); x.len()];
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * plane;
                            let scale = gam[c] * inv_std[c];
                            for k in base..base + plane {
                                dx[k] = if *batch_stats {
                                    let xh = (x[k] - mean[c]) * inv_std[c];
                                    scale * (gd[k] - dbeta[c] / count - xh * dgamma[c] / count)
                                } else {
                                    scale * gd[k]
                                };
                            }
                        }
                    }
                    self.acc(grads, *input, dx);
                }
                self.acc(grads, *gamma, dgamma);
                self.acc(grads, *beta, dbeta);
            }
            Op::GlobalAvgPool(a) => {
                let &[_, _, t, n] = self.shape(*a) else { unreachable!() };
                let inv = S::one() / S::lit((t * n) as f64);
                let d = gd.iter().flat_map(|&v| std::iter::repeat_n(v * inv, t * n)).collect();
                self.acc(grads, *a, d);
            }
            Op::Linear { input, weight, bias } => {
                let (b, k) = (self.shape(*input)[0], self.shape(*input)[1]);
                let o = self.shape(*weight)[0];
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                if wants(*input) {
                    let mut dx = vec![S::zero(); b * k];
                    for r in 0..b {
                        for c in 0..o {
                            let gv = gd[r * o + c];
                            for j in 0..k {
                                dx[r * k + j] += gv * w[c * k + j];
                            }
                        }
                    }
                    self.acc(grads, *input, dx);
                }
                if wants(*weight) {
                    let mut dw = vec![S::zero(); o * k];
                    for r in 0..b {
                        for c in 0..o {
                            let gv = gd[r * o + c];
                            for j in 0..k {
                                dw[c * k + j] += gv * x[r * k + j];
                            }
                        }
                    }
                    self.acc(grads, *weight, dw);
                }
                if let Some(bv) = bias {
                    let db = (0..o).map(|c| (0..b).map(|r| gd[r * o + c]).sum()).collect();
                    self.acc(grads, *bv, db);
                }
            }
            Op::FrameMean(a) => {
                let &[b, c, t, n] = self.shape(*a) else { unreachable!() };
                let inv = S::one() / S::lit((c * n) as f64);
                let mut dx = vec![S::zero(); b * c * t * n];
                for bi in 0..b {
                    for ci in 0..c {
                        for ti in 0..t {
                            let base = ((bi * c + ci) * t + ti) * n;
                            let v = gd[bi * t + ti] * inv;
                            dx[base..base + n].iter_mut().for_each(|d| *d = v);
                        }
                    }
                }
                self.acc(grads, *a, dx);
            }
            Op::ScaleFrames { input, scale } => {
                let &[b, c, t, n] = self.shape(*input) else {
                    unreachable!()
                };
                let x = self.value(*input).data();
                let s = self.value(*scale).data();
                if wants(*input) {
                    let mut dx = gd.to_vec();
                    for bi in 0..b {
                        for ci in 0..c {
                            for ti in 0..t {
                                let base = ((bi * c + ci) * t + ti) * n;
                                let f = s[bi * t + ti];
                                dx[base..base + n].iter_mut().for_each(|d| *d *= f);
                            }
                        }
                    }
                    self.acc(grads, *input, dx);
                }
                if wants(*scale) {
                    let mut ds = vec![S::zero(); b * t];
                    for bi in 0..b {
                        for ci in 0..c {
                            for ti in 0..t {
                                let base = ((bi * c + ci) * t + ti) * n;
                                ds[bi * t + ti] += (base..base + n).map(|k| gd[k] * x[k]).sum::<S>();
                            }
                        }
                    }
                    self.acc(grads, *scale, ds);
                }
            }
            Op::SelectFrames { input, indices } => {
                let &[b, c, t, n] = self.shape(*input) else {
                    unreachable!()
                };
                let k = indices[0].len();
                let mut dx = vec![S::zero(); b * c * t * n];
                for (bi, ix) in indices.iter().enumerate() {
                    for ci in 0..c {
                        for (kk, &ti) in ix.iter().enumerate() {
                            let src = ((bi * c + ci) * k + kk) * n;
                            let dst = ((bi * c + ci) * t + ti) * n;
                            for j in 0..n {
                                dx[dst + j] += gd[src + j];
                            }
                        }
                    }
                }
                self.acc(grads, *input, dx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let b = labels.len();
                let scale = gd[0] / S::lit(b as f64);
                let mut d: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * k + l] -= scale;
                }
                self.acc(grads, *logits, d);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<S>>], v: Var, data: Vec<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.data_mut().iter_mut().zip(&data).for_each(|(a, &b)| *a += b),
            slot @ None => {
                *slot = Some(Tensor::new(self.shape(v).to_vec(), data).expect("gradient matches value shape"))
            }
        }
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Softmax probabilities and log-sum-exp of one row, max-shifted.
pub(crate) fn softmax_row<S: Scalar>(row: &[S]) -> (Vec<S>, S) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
    let z: S = exps.iter().copied().sum();
    (exps.iter().map(|&e| e / z).collect(), m + z.ln())
}

fn conv_geom(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    let &[batch, c_in, t_in, joints] = input else {
        return Err(shape_err!("conv2d input must be (B,C,T,N), got {input:?}"));
    };
    let &[c_out, kc_in, k_t, k_n] = kernel else {
        return Err(shape_err!("conv2d kernel must be (C_out,C_in,K_t,K_n), got {kernel:?}"));
    };
    if kc_in != c_in {
        return Err(shape_err!(
            "conv2d kernel expects {kc_in} input channels, input has {c_in}"
        ));
    }
    if k_n != 1 {
        return Err(shape_err!("conv2d supports joint kernel extent 1 only, got {k_n}"));
    }
    let t_out = ConvGeom::output_len(t_in, k_t, stride, pad)
        .ok_or_else(|| shape_err!("conv2d: kernel {k_t}, stride {stride}, pad {pad} invalid for length {t_in}"))?;
    Ok(ConvGeom {
        batch,
        c_in,
        c_out,
        t_in,
        t_out,
        joints,
        k_t,
        stride,
        pad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5), true);
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(sigmoid(x)) + sum(x*x): grad = s(1-s) + 2x
        let xs = [0.3, -1.2, 2.0];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(xs.to_vec()), true);
        let s = tape.sigmoid(x);
        let f = tape.sum(s);
        let sq = tape.mul(x, x).unwrap();
        let gq = tape.sum(sq);
        let l = tape.add(f, gq).unwrap();
        let g = tape.backward(l).unwrap();
        for (i, &xv) in xs.iter().enumerate() {
            let sv = sigmoid(xv);
            let expect = sv * (1.0 - sv) + 2.0 * xv;
            assert!((g.get(x).unwrap().data()[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]), true);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn repeated_backward_accumulates_through_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, -3.0]), true);
        let l = tape.sum(x);
        let mut total = tape.backward(l).unwrap();
        total.accumulate(&tape.backward(l).unwrap());
        assert_eq!(total.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let c = tape.constant(Tensor::from_vec(vec![5.0, 7.0]));
        let p = tape.mul(x, c).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert_eq!(sigmoid(-800.0f64), 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
