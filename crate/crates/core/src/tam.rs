//! Temporal attention: per-frame importance scores, attention-weighted
//! features, and hard top-T′ frame selection.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::Ctx;
use crate::tensor::{ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

/// Indices of the `k` largest scores, ties to the smaller frame index.
///
/// With `preserve_order` the indices come back increasing, otherwise by
/// descending score.
pub fn select_top<S: Scalar>(scores: &[S], k: usize, preserve_order: bool) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::OutOfRange(format!(
            "cannot select {k} of {} frames",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps the lower index first among equal scores
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(k);
    if preserve_order {
        order.sort_unstable();
    }
    Ok(order)
}

/// Learnable `T × T` transform plus selection count.
#[derive(Clone, Debug)]
pub struct TemporalAttention {
    frames: usize,
    t_prime: usize,
    preserve_order: bool,
    theta: ParamId,
}

/// Tape handles produced by one attention pass.
#[derive(Clone, Debug)]
pub struct TamOutput {
    /// `(B, T)` scores in (0, 1).
    pub scores: Var,
    /// `(B, C, T, N)` attention-weighted features.
    pub attended: Var,
    /// `(B, C, T′, N)` selected frames.
    pub selected: Var,
    pub indices: Vec<Vec<usize>>,
}

impl TemporalAttention {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        frames: usize,
        t_prime: usize,
        preserve_order: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if t_prime == 0 || t_prime > frames {
            return Err(Error::Config(format!("T' = {t_prime} must lie in 1..={frames}")));
        }
        let amp = 1.0 / (frames as f64).sqrt();
        let mut theta = Tensor::<S>::uniform(&[frames, frames], amp, rng);
        for i in 0..frames {
            theta.set(&[i, i], theta.at(&[i, i]) + S::one());
        }
        let theta = store.add(format!("{prefix}.theta"), ParamKind::Attention, theta)?;
        Ok(Self {
            frames,
            t_prime,
            preserve_order,
            theta,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn t_prime(&self) -> usize {
        self.t_prime
    }

    pub fn preserve_order(&self) -> bool {
        self.preserve_order
    }

    pub fn theta(&self) -> ParamId {
        self.theta
    }

    pub fn param_count(&self) -> usize {
        self.frames * self.frames
    }

    /// Scores, weights and selects frames of a `(B, C, T, N)` map.
    ///
    /// `indices`, when given, replaces the score-based choice (one list per
    /// sample); gradients still flow through the attention weights.
    pub fn forward<S: Scalar>(
        &self,
        ctx: &mut Ctx<'_, S>,
        h: Var,
        indices: Option<Vec<Vec<usize>>>,
    ) -> Result<TamOutput> {
        let theta = ctx.param(self.theta);
        attend(ctx.tape, h, theta, self.t_prime, self.preserve_order, indices)
    }
}

fn attend<S: Scalar>(
    tape: &mut Tape<S>,
    h: Var,
    theta: Var,
    t_prime: usize,
    preserve_order: bool,
    indices: Option<Vec<Vec<usize>>>,
) -> Result<TamOutput> {
    let shape = tape.value(h).shape().to_vec();
    if shape.len() != 4 {
        return Err(shape_err!("attention needs (B,C,T,N), got {shape:?}"));
    }
    let (batch, t) = (shape[0], shape[2]);
    if tape.value(theta).shape() != [t, t] {
        return Err(shape_err!(
            "theta {:?} does not match {t} frames",
            tape.value(theta).shape()
        ));
    }
    let pooled = tape.frame_mean(h)?;
    let logits = tape.matmul(pooled, theta)?;
    let scores = tape.sigmoid(logits);
    let weighted = tape.scale_frames(h, scores)?;
    let attended = tape.relu(weighted);
    let indices = match indices {
        Some(ix) => ix,
        None => {
            let a = tape.value(scores).data();
            (0..batch)
                .map(|b| select_top(&a[b * t..(b + 1) * t], t_prime, preserve_order))
                .collect::<Result<_>>()?
        }
    };
    let selected = tape.select_frames(attended, indices.clone())?;
    Ok(TamOutput {
        scores,
        attended,
        selected,
        indices,
    })
}

/// Plain-tensor result for a single `(C, T, N)` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult<S> {
    pub scores: Vec<S>,
    pub selected_indices: Vec<usize>,
    pub attended: Tensor<S>,
    pub selected: Tensor<S>,
}

fn single<S: Scalar>(h: &Tensor<S>) -> Result<Tensor<S>> {
    if h.rank() != 3 {
        return Err(shape_err!("expected a (C,T,N) sequence, got {:?}", h.shape()));
    }
    h.clone().batched()
}

/// `sigmoid(mean_{c,n} H · Θ)` for a `(C, T, N)` sequence.
pub fn attention_scores<S: Scalar>(h: &Tensor<S>, theta: &Tensor<S>) -> Result<Vec<S>> {
    Ok(tam_forward(h, theta, h.shape().get(1).copied().unwrap_or(1), true)?.scores)
}

/// `ReLU(H[c, t, n] · a[t])`.
pub fn apply_attention<S: Scalar>(h: &Tensor<S>, a: &[S]) -> Result<Tensor<S>> {
    let x = single(h)?;
    let t = x.shape()[2];
    if a.len() != t {
        return Err(shape_err!("{} scores for {t} frames", a.len()));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(x);
    let av = tape.constant(Tensor::new(vec![1, t], a.to_vec())?);
    let w = tape.scale_frames(hv, av)?;
    let out = tape.relu(w);
    let shape = tape.value(out).shape()[1..].to_vec();
    tape.value(out).clone().reshape(&shape)
}

/// Scores, attention and top-`t_prime` selection for one sequence.
pub fn tam_forward<S: Scalar>(
    h: &Tensor<S>,
    theta: &Tensor<S>,
    t_prime: usize,
    preserve_order: bool,
) -> Result<AttentionResult<S>> {
    let x = single(h)?;
    let mut tape = Tape::new();
    let hv = tape.constant(x);
    let th = tape.constant(theta.clone());
    let out = attend(&mut tape, hv, th, t_prime, preserve_order, None)?;
    let unbatch = |v: Var| {
        let value = tape.value(v);
        value.clone().reshape(&value.shape()[1..])
    };
    Ok(AttentionResult {
        scores: tape.value(out.scores).data().to_vec(),
        selected_indices: out.indices[0].clone(),
        attended: unbatch(out.attended)?,
        selected: unbatch(out.selected)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_examples() {
        let a = [0.9, 0.1, 0.5, 0.9];
        assert_eq!(select_top(&a, 2, true).unwrap(), vec![0, 3]);
        assert_eq!(select_top(&a, 3, false).unwrap(), vec![0, 3, 2]);
        assert_eq!(select_top(&a, 4, true).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_top(&a, 0, true).is_err());
        assert!(select_top(&a, 5, true).is_err());
    }

    #[test]
    fn zero_input_gives_half_scores_and_first_frames() {
        let h = Tensor::<f64>::zeros(&[2, 6, 3]);
        let theta = Tensor::from_fn(&[6, 6], |i| i as f64 * 0.1);
        let r = tam_forward(&h, &theta, 3, true).unwrap();
        assert!(r.scores.iter().all(|&s| s == 0.5));
        assert_eq!(r.selected_indices, vec![0, 1, 2]);
        assert_eq!(r.selected.shape(), &[2, 3, 3]);
    }

    #[test]
    fn theta_shape_is_checked() {
        let h = Tensor::<f64>::zeros(&[1, 4, 2]);
        let err = tam_forward(&h, &Tensor::identity(3), 2, true).unwrap_err();
        assert_eq!(err.category(), "shape");
    }
}
