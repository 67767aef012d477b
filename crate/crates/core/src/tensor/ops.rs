//! Single-shot operations on plain tensors.
//!
//! Each function accepts a `(C, T, N)` sample or a `(B, C, T, N)` batch and
//! returns the same rank it was given. They evaluate through a throwaway
//! [`Tape`] so forward semantics are identical to the differentiable path.

use super::{Normalization, Tape, Tensor};
use crate::error::{shape_err, Result};
use crate::Scalar;

pub const BN_EPS: f64 = 1e-5;

fn unbatch<S: Scalar>(out: Tensor<S>, rank: usize) -> Result<Tensor<S>> {
    if rank == 3 {
        let s = out.shape()[1..].to_vec();
        out.reshape(&s)
    } else {
        Ok(out)
    }
}

/// Temporal cross-correlation with a `(C_out, C_in, K_t, 1)` kernel.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride_t: usize,
    pad_t: usize,
) -> Result<Tensor<S>> {
    let rank = input.rank();
    let mut tape = Tape::new();
    let x = tape.constant(input.clone().batched()?);
    let w = tape.constant(kernel.clone());
    let b = bias.map(|b| tape.constant(b.clone()));
    let y = tape.conv2d(x, w, b, stride_t, pad_t)?;
    unbatch(tape.value(y).clone(), rank)
}

/// `out[.., i] = Σ_j input[.., j] · m[j, i]`.
pub fn matmul_last<S: Scalar>(input: &Tensor<S>, m: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let mv = tape.constant(m.clone());
    let y = tape.matmul_last(x, mv)?;
    Ok(tape.value(y).clone())
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| v.max(S::zero()))
}

pub fn sigmoid<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(super::sigmoid)
}

/// Mean over frames and joints: `(C,T,N) -> (C)` or `(B,C,T,N) -> (B,C)`.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let rank = input.rank();
    let mut tape = Tape::new();
    let x = tape.constant(input.clone().batched()?);
    let y = tape.global_avg_pool(x)?;
    let out = tape.value(y).clone();
    if rank == 3 {
        let c = out.shape()[1];
        out.reshape(&[c])
    } else {
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance tracked by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub momentum: S,
}

impl<S: Scalar> RunningStats<S> {
    pub fn new(channels: usize, momentum: S) -> Self {
        Self {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
            momentum,
        }
    }

    /// Exponential update from batch statistics; `count` is the number of
    /// elements per channel, used for the unbiased variance.
    pub fn update(&mut self, batch_mean: &[S], batch_var: &[S], count: usize) {
        let m = self.momentum;
        let unbias = if count > 1 {
            S::lit(count as f64 / (count - 1) as f64)
        } else {
            S::one()
        };
        for c in 0..self.mean.len() {
            self.mean[c] = (S::one() - m) * self.mean[c] + m * batch_mean[c];
            self.var[c] = (S::one() - m) * self.var[c] + m * batch_var[c] * unbias;
        }
    }
}

/// Per-channel standardization followed by `gamma * x + beta`.
///
/// Train mode uses the batch statistics and folds them into `stats`;
/// eval mode reads `stats` and leaves it untouched.
pub fn batch_norm<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    stats: &mut RunningStats<S>,
    mode: Mode,
) -> Result<Tensor<S>> {
    let rank = input.rank();
    let x = input.clone().batched()?;
    let channels = x.shape()[1];
    if stats.mean.len() != channels {
        return Err(shape_err!(
            "running statistics for {} channels, input has {channels}",
            stats.mean.len()
        ));
    }
    let count = x.numel() / channels;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(gamma.clone());
    let b = tape.constant(beta.clone());
    let eps = S::lit(BN_EPS);
    let norm = match mode {
        Mode::Train => Normalization::Batch { eps },
        Mode::Eval => Normalization::Fixed {
            mean: stats.mean.clone(),
            var: stats.var.clone(),
            eps,
        },
    };
    let (y, mean, var) = tape.batch_norm(xv, g, b, norm)?;
    if mode == Mode::Train {
        stats.update(&mean, &var, count);
    }
    unbatch(tape.value(y).clone(), rank)
}
